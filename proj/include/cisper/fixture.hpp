#pragma once

// Small synthetic dataset for smoke runs and tests: three emotions, a
// 64-word vocabulary, conversations opened by an emotional sentence and
// continued with neutral filler that keeps the opener's label.

#include "cisper/config.hpp"
#include "cisper/eval.hpp"

namespace cisper {

// Toy-scale dims, 2-layer masked LM, learning rate raised for the tiny model.
RunConfig toy_config();

Corpus toy_corpus(Split split);  // train: 8 conversations; validation/test: 4 each
Vocabulary toy_vocabulary(int reserved);

// Corpora, reference features (from config dims and feature_seed) and vocabulary.
ExperimentData toy_experiment(const RunConfig& config);

}  // namespace cisper
