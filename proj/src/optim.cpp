#include "dcolor/optim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dcolor {

namespace {

void updateOne(const std::string& name, Tensor& value, const Tensor& grad, AdamState& state, double biasFix1,
               double biasFix2) {
    if (!grad.sameShape(value)) {
        throw std::invalid_argument("adam: missing or mis-shaped gradient for parameter '" + name + "'");
    }
    auto& m = state.firstMoment[name];
    auto& v = state.secondMoment[name];
    if (m.empty()) m = Tensor(value.shape());
    if (v.empty()) v = Tensor(value.shape());
    if (!m.sameShape(value) || !v.sameShape(value)) {
        throw std::invalid_argument("adam: accumulator shape mismatch for parameter '" + name + "'");
    }
    const AdamOptions& o = state.options;
    for (std::size_t i = 0; i < value.size(); ++i) {
        const double g = grad[i] + o.weightDecay * value[i];
        m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * g;
        v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * g * g;
        const double mHat = m[i] / biasFix1;
        const double vHat = v[i] / biasFix2;
        value[i] -= o.learningRate * mHat / (std::sqrt(vHat) + o.epsilon);
    }
}

} // namespace

void adamStep(ParameterSet& params, AdamState& state, std::span<const std::string> frozenPrefixes) {
    for (auto& [name, p] : params) {
        if (!p.grad.sameShape(p.value)) {
            throw std::invalid_argument("adam: missing gradient for parameter '" + name + "'");
        }
    }
    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double fix1 = 1.0 - std::pow(state.options.beta1, t);
    const double fix2 = 1.0 - std::pow(state.options.beta2, t);
    for (auto& [name, p] : params) {
        const bool frozen = std::any_of(frozenPrefixes.begin(), frozenPrefixes.end(),
                                        [&](const std::string& prefix) { return name.starts_with(prefix); });
        if (!frozen) {
            updateOne(name, p.value, p.grad, state, fix1, fix2);
        } else {
            if (state.firstMoment[name].empty()) state.firstMoment[name] = Tensor(p.value.shape());
            if (state.secondMoment[name].empty()) state.secondMoment[name] = Tensor(p.value.shape());
        }
    }
}

void adamStep(std::map<std::string, Tensor>& params, const std::map<std::string, Tensor>& grads,
              AdamState& state) {
    for (const auto& [name, _] : params) {
        if (!grads.count(name)) throw std::invalid_argument("adam: missing gradient for parameter '" + name + "'");
    }
    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double fix1 = 1.0 - std::pow(state.options.beta1, t);
    const double fix2 = 1.0 - std::pow(state.options.beta2, t);
    for (auto& [name, value] : params) updateOne(name, value, grads.at(name), state, fix1, fix2);
}

} // namespace dcolor
