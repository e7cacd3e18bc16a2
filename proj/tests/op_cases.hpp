// Random differentiable-op instances shared by the unit and acceptance
// gradient checks. Inputs to ops with kinks are drawn away from the kink.
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "wdsc/ops.hpp"

namespace wdsc::testing {

struct OpCase {
  std::function<T()> f;
  std::vector<T> inputs;
};

struct OpFactory {
  std::string name;
  std::function<OpCase(Rng&)> make;
};

inline T away_from_zero(Shape shape, Rng& rng, double lo = 0.1, double hi = 1.0) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi) * (rng.uniform() < 0.5 ? -1 : 1);
  return T::from(std::move(shape), std::move(v), true);
}

inline std::size_t small_dim(Rng& rng, std::size_t lo = 1, std::size_t hi = 4) {
  return lo + rng.below(hi - lo + 1);
}

inline Shape small_shape(Rng& rng) { return {small_dim(rng), small_dim(rng, 2, 5), small_dim(rng, 2, 5)}; }

template <class Op>
OpFactory unary_case(std::string name, Op op, double lo = -1.0, double hi = 1.0) {
  return {name, [op, lo, hi](Rng& rng) {
            T x = random_tensor(small_shape(rng), rng, lo, hi);
            return OpCase{[op, x] { return project(op(x)); }, {x}};
          }};
}

template <class Op>
OpFactory kinked_case(std::string name, Op op) {
  return {name, [op](Rng& rng) {
            T x = away_from_zero(small_shape(rng), rng);
            return OpCase{[op, x] { return project(op(x)); }, {x}};
          }};
}

template <class Op>
OpFactory binary_case(std::string name, Op op, double blo = -1.0, double bhi = 1.0) {
  return {name, [op, blo, bhi](Rng& rng) {
            const Shape s = small_shape(rng);
            T a = random_tensor(s, rng), b = random_tensor(s, rng, blo, bhi);
            return OpCase{[op, a, b] { return project(op(a, b)); }, {a, b}};
          }};
}

inline OpFactory conv_case(std::string name, std::size_t k, std::size_t stride, bool transposed) {
  return {name, [=](Rng& rng) {
            const std::size_t ci = small_dim(rng, 1, 3), co = small_dim(rng, 1, 3);
            T x = random_tensor({ci, small_dim(rng, 3, 7), small_dim(rng, 3, 7)}, rng);
            T w = random_tensor({co, ci, k, k}, rng, -0.5, 0.5);
            T b = random_tensor({co}, rng);
            auto f = [=] {
              return project(transposed ? conv_transpose2d(x, w, b, stride) : conv2d(x, w, b, stride));
            };
            return OpCase{f, {x, w, b}};
          }};
}

inline OpFactory gdn_case(std::string name, bool inverse) {
  return {name, [=](Rng& rng) {
            const std::size_t c = small_dim(rng, 1, 4);
            T x = random_tensor({c, small_dim(rng, 1, 4), small_dim(rng, 1, 4)}, rng);
            T beta = random_tensor({c}, rng, 0.5, 1.5);
            T gamma = random_tensor({c, c}, rng, 0.0, 0.5);
            return OpCase{[=] { return project(gdn(x, beta, gamma, inverse)); }, {x, beta, gamma}};
          }};
}

inline std::vector<OpFactory> all_op_cases() {
  std::vector<OpFactory> cases;
  cases.push_back(binary_case("add", [](const T& a, const T& b) { return a + b; }));
  cases.push_back(binary_case("sub", [](const T& a, const T& b) { return a - b; }));
  cases.push_back(binary_case("mul", [](const T& a, const T& b) { return a * b; }));
  cases.push_back(binary_case("div", [](const T& a, const T& b) { return a / b; }, 0.5, 1.5));
  cases.push_back(unary_case("scalar_affine", [](const T& x) { return 2.5 - (x * 3.0 + 1.0); }));
  cases.push_back(unary_case("square", [](const T& x) { return square(x); }));
  cases.push_back(kinked_case("abs", [](const T& x) { return abs(x); }));
  cases.push_back(unary_case("exp", [](const T& x) { return exp(x); }));
  cases.push_back(unary_case("log", [](const T& x) { return log(x); }, 0.2, 2.0));
  cases.push_back(unary_case("sqrt", [](const T& x) { return sqrt(x); }, 0.2, 2.0));
  cases.push_back(unary_case("tanh", [](const T& x) { return tanh(x); }, -2, 2));
  cases.push_back(unary_case("sigmoid", [](const T& x) { return sigmoid(x); }, -3, 3));
  cases.push_back(unary_case("softplus", [](const T& x) { return softplus(x); }, -3, 3));
  cases.push_back(kinked_case("relu", [](const T& x) { return relu(x); }));
  cases.push_back(unary_case("normal_cdf", [](const T& x) { return normal_cdf(x); }, -2, 2));
  cases.push_back(kinked_case("clamp_min", [](const T& x) { return clamp_min(x, 0.0); }));
  // kinks at x = +-0.5; magnitudes in [0.1, 0.4] or [0.6, 1.0]
  cases.push_back({"clamp", [](Rng& rng) {
                     T x = away_from_zero(small_shape(rng), rng, 0.1, 0.4);
                     for (auto& v : x.mutable_data())
                       if (rng.uniform() < 0.5) v += v > 0 ? 0.5 : -0.5;
                     return OpCase{[x] { return project(clamp(x * 2.0, -1.0, 1.0)); }, {x}};
                   }});
  cases.push_back(unary_case("pow", [](const T& x) { return pow(x, 0.7); }, 0.2, 2.0));
  cases.push_back(unary_case("sum", [](const T& x) { return sum(square(x)); }));
  cases.push_back(unary_case("mean", [](const T& x) { return mean(square(x)) * 7.0; }));
  cases.push_back(unary_case("mean_per_channel", [](const T& x) { return mean_per_channel(x); }));
  cases.push_back(unary_case("reshape", [](const T& x) { return reshape(x, {x.size()}); }));
  cases.push_back({"concat", [](Rng& rng) {
                     const std::size_t h = small_dim(rng, 2, 4), w = small_dim(rng, 2, 4);
                     T a = random_tensor({small_dim(rng), h, w}, rng), b = random_tensor({small_dim(rng), h, w}, rng);
                     return OpCase{[=] { return project(concat(a, b)); }, {a, b}};
                   }});
  cases.push_back({"add_broadcast", [](Rng& rng) {
                     const std::size_t c = small_dim(rng), r = small_dim(rng), m = small_dim(rng, 2, 6);
                     T x = random_tensor({c, r, m}, rng), p = random_tensor({c, r}, rng);
                     return OpCase{[=] { return project(add_broadcast(x, p)); }, {x, p}};
                   }});
  cases.push_back({"mul_broadcast", [](Rng& rng) {
                     const std::size_t c = small_dim(rng), r = small_dim(rng), m = small_dim(rng, 2, 6);
                     T x = random_tensor({c, r, m}, rng), p = random_tensor({c, r}, rng);
                     return OpCase{[=] { return project(mul_broadcast(x, p)); }, {x, p}};
                   }});
  cases.push_back({"channel_matmul", [](Rng& rng) {
                     const std::size_t c = small_dim(rng), r = small_dim(rng), k = small_dim(rng),
                                       m = small_dim(rng, 2, 6);
                     T w = random_tensor({c, r, k}, rng), x = random_tensor({c, k, m}, rng);
                     return OpCase{[=] { return project(channel_matmul(w, x)); }, {w, x}};
                   }});
  cases.push_back(conv_case("conv2d_k5_s2", 5, 2, false));
  cases.push_back(conv_case("conv2d_k3_s1", 3, 1, false));
  cases.push_back(conv_case("conv_transpose2d_k5_s2", 5, 2, true));
  cases.push_back(conv_case("conv_transpose2d_k3_s1", 3, 1, true));
  cases.push_back(gdn_case("gdn", false));
  cases.push_back(gdn_case("igdn", true));
  cases.push_back({"add_uniform_noise", [](Rng& rng) {
                     T x = random_tensor(small_shape(rng), rng);
                     const std::uint64_t seed = rng.next_u64();
                     // Same noise realization on every evaluation.
                     return OpCase{[=] {
                                     Rng noise(seed);
                                     return project(square(add_uniform_noise(x, noise)));
                                   },
                                   {x}};
                   }});
  cases.push_back({"separable_filter", [](Rng& rng) {
                     T x = random_tensor({small_dim(rng, 1, 3), small_dim(rng, 3, 7), small_dim(rng, 3, 7)}, rng);
                     std::vector<double> k{0.25, 0.5, 0.25};
                     return OpCase{[=] { return project(separable_filter_valid(x, k)); }, {x}};
                   }});
  cases.push_back({"avg_pool2", [](Rng& rng) {
                     T x = random_tensor({small_dim(rng), small_dim(rng, 2, 7), small_dim(rng, 2, 7)}, rng);
                     return OpCase{[=] { return project(avg_pool2(x)); }, {x}};
                   }});
  return cases;
}

}  // namespace wdsc::testing
