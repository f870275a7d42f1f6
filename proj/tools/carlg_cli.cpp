// carlg: train, evaluate and inspect the argument extractors.
//
// Files are written under $CARLG_OUTPUT_DIR (default: current directory).
// Exit codes: 0 ok, 1 usage, 2 data error, 3 divergence.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "carlg/carlg.hpp"

namespace fs = std::filesystem;
using namespace carlg;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitDivergence = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

fs::path output_dir() {
  const char* env = std::getenv("CARLG_OUTPUT_DIR");
  fs::path dir = env != nullptr && *env != '\0' ? fs::path(env) : fs::current_path();
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

struct CommonOpts {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string ablate;
  std::string variant;
};

RunConfig resolve_config(const CommonOpts& o) {
  Variant v = Variant::kSpan;
  if (!o.variant.empty()) v = parse_variant(o.variant);
  RunConfig c = toy_preset(v);
  if (!o.config.empty()) {
    const std::string ext = fs::path(o.config).extension().string();
    if (ext == ".toml") throw UsageError("TOML configs are not supported; use JSON");
    std::ifstream in(o.config);
    if (!in) throw DataError("cannot open config " + o.config);
    try {
      const nlohmann::json j = nlohmann::json::parse(in);
      // A variant named in the file picks that variant's toy preset as the base.
      if (j.contains("variant")) {
        const Variant fv = parse_variant(j.at("variant").get<std::string>());
        if (!o.variant.empty() && fv != v) throw UsageError("--variant " + o.variant + " contradicts the config file");
        v = fv;
      }
      c = config_from_json(j, toy_preset(v));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("config " + o.config + ": " + e.what());
    }
  }
  if (o.seed) c.seed = *o.seed;
  if (o.ablate == "cca") {
    c.disable_cca = true;
  } else if (o.ablate == "rlig") {
    c.disable_rlig = true;
  } else if (o.ablate == "both") {
    c.disable_cca = c.disable_rlig = true;
  } else if (!o.ablate.empty()) {
    throw UsageError("--ablate expects cca, rlig or both");
  }
  c.validate();
  return c;
}

void add_common(CLI::App* app, CommonOpts& o) {
  app->add_option("--config", o.config, "JSON run configuration");
  app->add_option("--seed", o.seed, "random seed");
  app->add_option("--ablate", o.ablate, "disable a module: cca, rlig or both")->check(CLI::IsMember({"cca", "rlig", "both"}));
  app->add_option("--variant", o.variant, "span or prompt")->check(CLI::IsMember({"span", "prompt"}));
}

std::vector<std::vector<Prediction>> prediction_lists(const std::vector<EventPrediction>& preds) {
  std::vector<std::vector<Prediction>> out;
  for (const EventPrediction& p : preds) out.push_back(p.predictions);
  return out;
}

std::vector<std::vector<Argument>> gold_lists(const std::vector<EventInstance>& data) {
  std::vector<std::vector<Argument>> out;
  for (const EventInstance& inst : data) out.push_back(inst.args);
  return out;
}

std::vector<EventPrediction> load_predictions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open predictions " + path);
  std::vector<EventPrediction> out;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(event_prediction_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw DataError(path + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Document-level event argument extraction with contextual clue and role guidance"};
  app.require_subcommand(1);

  CommonOpts common;
  std::string train_path, dev_path, data_path, checkpoint_path, templates_path, predictions_path;
  std::string checkpoint_name, synth_name;
  int instance_index = 0;
  SynthConfig synth;

  CLI::App* train_cmd = app.add_subcommand("train", "train a model; writes checkpoint.json");
  add_common(train_cmd, common);
  train_cmd->add_option("--train", train_path, "training JSONL")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--dev", dev_path, "dev JSONL evaluated after training")->check(CLI::ExistingFile);
  train_cmd->add_option("--templates", templates_path, "prompt template registry (JSON)")->check(CLI::ExistingFile);
  train_cmd->add_option("--out", checkpoint_name, "checkpoint file name")->default_val("checkpoint.json");

  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint; writes metrics.json");
  eval_cmd->add_option("--checkpoint", checkpoint_path)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--data", data_path)->required()->check(CLI::ExistingFile);

  CLI::App* predict_cmd = app.add_subcommand("predict", "write predictions.jsonl");
  predict_cmd->add_option("--checkpoint", checkpoint_path)->required()->check(CLI::ExistingFile);
  predict_cmd->add_option("--data", data_path)->required()->check(CLI::ExistingFile);

  CLI::App* synth_cmd = app.add_subcommand("synth", "generate a planted-clue corpus");
  synth_cmd->add_option("--seed", synth.seed);
  synth_cmd->add_option("--n-docs", synth.n_docs);
  synth_cmd->add_option("--vocab", synth.vocab);
  synth_cmd->add_option("--event-types", synth.n_event_types);
  synth_cmd->add_option("--roles", synth.n_roles);
  synth_cmd->add_option("--roles-per-event", synth.roles_per_event);
  synth_cmd->add_option("--clue-strength", synth.clue_strength);
  synth_cmd->add_option("--coupling", synth.coupling);
  synth_cmd->add_option("--out", synth_name, "output file name")->default_val("synthetic.jsonl");

  CLI::App* vis_cmd = app.add_subcommand("visualize", "export clue weights, role similarity and embeddings");
  vis_cmd->add_option("--checkpoint", checkpoint_path)->required()->check(CLI::ExistingFile);
  vis_cmd->add_option("--data", data_path)->required()->check(CLI::ExistingFile);
  vis_cmd->add_option("--index", instance_index, "instance to export")->default_val(0);

  CLI::App* cooccur_cmd = app.add_subcommand("cooccur", "role co-occurrence matrix; writes cooccurrence.csv");
  cooccur_cmd->add_option("--data", data_path)->required()->check(CLI::ExistingFile);

  CLI::App* errors_cmd = app.add_subcommand("errors", "error taxonomy; writes errors.json");
  errors_cmd->add_option("--data", data_path)->required()->check(CLI::ExistingFile);
  auto* ck = errors_cmd->add_option("--checkpoint", checkpoint_path)->check(CLI::ExistingFile);
  auto* pr = errors_cmd->add_option("--predictions", predictions_path)->check(CLI::ExistingFile);
  ck->excludes(pr);
  pr->excludes(ck);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    const fs::path out = output_dir();
    if (*train_cmd) {
      const RunConfig cfg = resolve_config(common);
      const std::vector<EventInstance> train_data = load_dataset(train_path);
      if (train_data.empty()) throw DataError("training set is empty");
      std::optional<TemplateRegistry> templates;
      if (!templates_path.empty()) templates = load_template_registry(templates_path, LabelSpace::from(train_data));
      auto model = make_model(cfg, train_data, templates ? &*templates : nullptr);
      TrainOptions opts;
      opts.on_epoch = [](const nlohmann::json& rec) { std::cout << rec.dump() << std::endl; };
      train(*model, train_data, opts);
      const LossStats& st = model->extractor->stats();
      if (st.clamped_probabilities + st.dropped_golds + st.conflicting_labels > 0) {
        std::cerr << "warning: clamped=" << st.clamped_probabilities << " dropped_golds=" << st.dropped_golds
                  << " conflicting_labels=" << st.conflicting_labels << '\n';
      }
      save_checkpoint(*model, (out / checkpoint_name).string());
      std::cout << "checkpoint: " << (out / checkpoint_name).string() << '\n';
      if (!dev_path.empty()) {
        const EvalResult r = evaluate(*model, load_dataset(dev_path));
        std::cout << r.metrics.table();
        write_text(out / "dev_metrics.json", r.to_json().dump(2) + "\n");
      }
    } else if (*eval_cmd) {
      auto model = load_checkpoint(checkpoint_path);
      const EvalResult r = evaluate(*model, load_dataset(data_path));
      std::cout << r.metrics.table();
      write_text(out / "metrics.json", r.to_json().dump(2) + "\n");
    } else if (*predict_cmd) {
      auto model = load_checkpoint(checkpoint_path);
      std::string lines;
      for (const EventPrediction& p : predict_all(*model, load_dataset(data_path))) lines += to_json(p).dump() + "\n";
      write_text(out / "predictions.jsonl", lines);
      std::cout << "predictions: " << (out / "predictions.jsonl").string() << '\n';
    } else if (*synth_cmd) {
      const auto data = generate_synthetic(synth);
      save_dataset((out / synth_name).string(), data);
      std::cout << data.size() << " events: " << (out / synth_name).string() << '\n';
    } else if (*vis_cmd) {
      auto model = load_checkpoint(checkpoint_path);
      const auto data = load_dataset(data_path);
      if (instance_index < 0 || instance_index >= static_cast<int>(data.size())) {
        throw UsageError("--index outside the dataset");
      }
      for (const std::string& p :
           export_visuals(*model, data[static_cast<std::size_t>(instance_index)], (out / "visuals").string())) {
        std::cout << p << '\n';
      }
    } else if (*cooccur_cmd) {
      write_text(out / "cooccurrence.csv", role_cooccurrence(load_dataset(data_path)).csv());
      std::cout << "cooccurrence: " << (out / "cooccurrence.csv").string() << '\n';
    } else if (*errors_cmd) {
      const auto data = load_dataset(data_path);
      std::vector<EventPrediction> preds;
      if (!checkpoint_path.empty()) {
        preds = predict_all(*load_checkpoint(checkpoint_path), data);
      } else if (!predictions_path.empty()) {
        preds = load_predictions(predictions_path);
      } else {
        throw UsageError("errors needs --checkpoint or --predictions");
      }
      if (preds.size() != data.size()) throw DataError("prediction count does not match the dataset");
      const ErrorReport rep = error_report(prediction_lists(preds), gold_lists(data));
      write_text(out / "errors.json", rep.to_json().dump(2) + "\n");
      std::cout << rep.to_json().dump(2) << '\n';
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  }
  return 0;
}
