#pragma once

#include "dcolor/graph.hpp"
#include "dcolor/tensor.hpp"

#include <cstdint>
#include <map>
#include <span>
#include <string>

namespace dcolor {

struct AdamOptions {
    double learningRate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    // L2 penalty folded into the gradient (classic Adam, not AdamW).
    double weightDecay = 0.0;
};

struct AdamState {
    AdamOptions options;
    std::uint64_t step = 0;
    std::map<std::string, Tensor> firstMoment;
    std::map<std::string, Tensor> secondMoment;
};

// One Adam update of every parameter in `params` from its accumulated grad.
// Throws if a parameter has no gradient buffer of matching shape. Parameters
// whose name starts with one of `frozenPrefixes` keep their value and moments.
void adamStep(ParameterSet& params, AdamState& state, std::span<const std::string> frozenPrefixes = {});

// Name-keyed variant: `grads` must hold an entry for every key of `params`.
void adamStep(std::map<std::string, Tensor>& params, const std::map<std::string, Tensor>& grads,
              AdamState& state);

} // namespace dcolor
