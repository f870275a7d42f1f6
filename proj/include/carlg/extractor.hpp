// Common surface of the span and prompt extractors, as seen by the trainer.

#pragma once

#include <string>
#include <vector>

#include "carlg/autodiff.hpp"
#include "carlg/dataset.hpp"
#include "carlg/encoder.hpp"
#include "carlg/evaluation.hpp"
#include "carlg/parameters.hpp"

namespace carlg {

// Counters for numerically clamped or silently dropped training signal.
struct LossStats {
  long clamped_probabilities = 0;
  long dropped_golds = 0;
  long conflicting_labels = 0;
};

class Extractor {
 public:
  virtual ~Extractor() = default;

  virtual ad::Var loss(ad::Tape& tape, const EventInstance& inst, const ForwardMode& mode) const = 0;
  virtual EventPrediction predict(const EventInstance& inst) const = 0;
  // Piece count of the encoder input, used for length bucketing.
  virtual int input_length(const EventInstance& inst) const = 0;

  LossStats& stats() const { return stats_; }

 protected:
  mutable LossStats stats_;
};

// Fusion weights: the mean-pooled / slot path always exists, the clue and
// role slices only when their module is enabled. Each slice is its own
// matrix so a disabled module contributes exactly nothing.
struct FusionNames {
  std::string base;
  std::string clue = "cca.fuse.w_c";
  std::string role = "rlig.fuse.w_r";
};

inline void add_fusion_manifest(Manifest& m, const FusionNames& names, const std::string& base_module, int d,
                                bool use_cca, bool use_rlig) {
  m.push_back({names.base, d, d, base_module, "head", Init::kTruncatedNormal});
  if (use_cca) m.push_back({names.clue, d, d, "cca.fusion", "head", Init::kTruncatedNormal});
  if (use_rlig) m.push_back({names.role, d, d, "rlig.fusion", "head", Init::kTruncatedNormal});
}

}  // namespace carlg
