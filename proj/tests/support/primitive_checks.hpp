#pragma once

// One grad_check per differentiable primitive, shared by the unit tests and
// the acceptance run.

#include "splatlab/optim.hpp"
#include "splatlab/rng.hpp"
#include "splatlab/tensor.hpp"

#include <functional>
#include <string>
#include <vector>

namespace splatlab::testing {

inline GradCheckInput random_input(Rng& rng, ad::Shape s, double lo = -1.0, double hi = 1.0) {
    GradCheckInput in{s, std::vector<double>(s.size())};
    for (double& v : in.value) v = rng.uniform(lo, hi);
    return in;
}

// Reduces a tensor to a scalar through fixed random weights so that every
// output element carries a distinct adjoint.
inline ad::Tensor<double> weighted(ad::Tape<double>& tape, ad::Tensor<double> t, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> w(t.shape().size());
    for (double& v : w) v = rng.uniform(-1.0, 1.0);
    return ad::sum(ad::mul(t, tape.constant(t.shape(), w)));
}

struct PrimitiveCheck {
    std::string name;
    std::function<GradCheckReport()> run;
};

inline std::vector<PrimitiveCheck> primitive_grad_checks() {
    using ad::Tape;
    using ad::Tensor;
    const ad::Shape s{4, 5};
    std::vector<PrimitiveCheck> out;
    out.push_back({"matmul", [s] {
        Rng rng(100);
        return grad_check(
            [](Tape<double>& t, const auto& x) { return weighted(t, ad::matmul(x[0], x[1]), 1); },
            {random_input(rng, {4, 3}), random_input(rng, {3, 5})});
    }});
    out.push_back({"transpose", [s] {
        Rng rng(101);
        return grad_check([](Tape<double>& t, const auto& x) { return weighted(t, ad::transpose(x[0]), 2); },
                          {random_input(rng, s)});
    }});
    out.push_back({"add and sub with broadcast", [s] {
        Rng rng(102);
        return grad_check(
            [](Tape<double>& t, const auto& x) {
                return weighted(t, ad::sub(ad::add(x[0], x[1]), ad::add(x[0], x[2])), 3);
            },
            {random_input(rng, s), random_input(rng, s), random_input(rng, {1, 5})});
    }});
    out.push_back({"mul with broadcast", [s] {
        Rng rng(103);
        return grad_check(
            [](Tape<double>& t, const auto& x) { return weighted(t, ad::mul(ad::mul(x[0], x[1]), x[2]), 4); },
            {random_input(rng, s), random_input(rng, s), random_input(rng, {1, 5})});
    }});
    out.push_back({"scale", [s] {
        Rng rng(104);
        return grad_check([](Tape<double>& t, const auto& x) { return weighted(t, ad::scale(x[0], -2.5), 5); },
                          {random_input(rng, s)});
    }});
    out.push_back({"relu away from the kink", [s] {
        Rng rng(105);
        auto in = random_input(rng, s);
        for (double& v : in.value) v = (v >= 0 ? 0.05 : -0.05) + v;
        return grad_check([](Tape<double>& t, const auto& x) { return weighted(t, ad::relu(x[0]), 6); }, {in});
    }});
    out.push_back({"tanh", [s] {
        Rng rng(106);
        return grad_check([](Tape<double>& t, const auto& x) { return weighted(t, ad::tanh(x[0]), 7); },
                          {random_input(rng, s, -2, 2)});
    }});
    out.push_back({"sigmoid", [s] {
        Rng rng(107);
        return grad_check([](Tape<double>& t, const auto& x) { return weighted(t, ad::sigmoid(x[0]), 8); },
                          {random_input(rng, s, -4, 4)});
    }});
    out.push_back({"exp", [s] {
        Rng rng(108);
        return grad_check([](Tape<double>& t, const auto& x) { return weighted(t, ad::exp(x[0]), 9); },
                          {random_input(rng, s, -2, 2)});
    }});
    out.push_back({"log", [s] {
        Rng rng(109);
        return grad_check([](Tape<double>& t, const auto& x) { return weighted(t, ad::log(x[0]), 10); },
                          {random_input(rng, s, 0.2, 3.0)});
    }});
    out.push_back({"softmax", [s] {
        Rng rng(110);
        return grad_check([](Tape<double>& t, const auto& x) { return weighted(t, ad::softmax(x[0]), 11); },
                          {random_input(rng, s, -2, 2)});
    }});
    out.push_back({"layer_norm", [s] {
        Rng rng(111);
        return grad_check(
            [](Tape<double>& t, const auto& x) { return weighted(t, ad::layer_norm(x[0], x[1], x[2]), 12); },
            {random_input(rng, s), random_input(rng, {1, 5}), random_input(rng, {1, 5})});
    }});
    out.push_back({"concat on both axes", [s] {
        Rng rng(112);
        return grad_check(
            [](Tape<double>& t, const auto& x) {
                auto cols = ad::concat<double>({x[0], x[1]}, 1);
                auto rows = ad::concat<double>({cols, ad::concat<double>({x[1], x[0]}, 1)}, 0);
                return weighted(t, rows, 13);
            },
            {random_input(rng, {3, 2}), random_input(rng, {3, 4})});
    }});
    out.push_back({"gather with repeats", [s] {
        Rng rng(113);
        return grad_check(
            [](Tape<double>& t, const auto& x) { return weighted(t, ad::gather(x[0], {3, 0, 0, 2, 3, 1}), 14); },
            {random_input(rng, s)});
    }});
    out.push_back({"scatter_mean with an empty group", [s] {
        Rng rng(114);
        return grad_check(
            [](Tape<double>& t, const auto& x) { return weighted(t, ad::scatter_mean(x[0], {2, 0, 2, 2}, 4), 15); },
            {random_input(rng, s)});
    }});
    out.push_back({"slice", [s] {
        Rng rng(115);
        return grad_check([](Tape<double>& t, const auto& x) { return weighted(t, ad::slice(x[0], 1, 4), 16); },
                          {random_input(rng, s)});
    }});
    out.push_back({"sum and mean", [s] {
        Rng rng(116);
        return grad_check(
            [](Tape<double>&, const auto& x) { return ad::add(ad::sum(ad::mul(x[0], x[0])), ad::mean(x[0])); },
            {random_input(rng, s)});
    }});
    out.push_back({"windowed_attention", [s] {
        Rng rng(117);
        return grad_check(
            [](Tape<double>& t, const auto& x) { return weighted(t, ad::windowed_attention(x[0], 2, 3), 17); },
            {random_input(rng, {7, 12})});
    }});
    return out;
}

}  // namespace splatlab::testing
