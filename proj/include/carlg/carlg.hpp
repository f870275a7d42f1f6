// Umbrella header.

#pragma once

#include "carlg/autodiff.hpp"
#include "carlg/cca.hpp"
#include "carlg/config.hpp"
#include "carlg/dataset.hpp"
#include "carlg/encoder.hpp"
#include "carlg/errors.hpp"
#include "carlg/evaluation.hpp"
#include "carlg/extractor.hpp"
#include "carlg/parameters.hpp"
#include "carlg/prompt_model.hpp"
#include "carlg/rlig.hpp"
#include "carlg/sequence.hpp"
#include "carlg/span_model.hpp"
#include "carlg/synthetic.hpp"
#include "carlg/tokenizer.hpp"
#include "carlg/trainer.hpp"
