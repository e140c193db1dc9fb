#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mtlforge/autodiff/ops.hpp"
#include "support/gradcheck.hpp"

namespace mtl::testing {

/// Finite-difference check of every differentiable tape operation on small
/// random inputs. One entry per operation (chunk_mix twice: single and
/// multi-column chunks).
inline std::vector<std::pair<std::string, GradCheckResult>> operation_grad_checks(std::uint64_t seed) {
  Rng rng(seed);
  Parameter a("a", random_tensor({5, 4}, rng)), b("b", random_tensor({4, 3}, rng));
  Parameter c("c", random_tensor({5, 4}, rng)), bias("bias", random_tensor({3}, rng));
  Parameter gamma("gamma", random_tensor({4}, rng)), beta("beta", random_tensor({4}, rng));
  Parameter table("table", random_tensor({6, 3}, rng)), alpha("alpha", random_tensor({4, 4}, rng));
  Parameter sq("sq", random_tensor({4, 4}, rng)), pred("pred", random_tensor({5, 3}, rng));
  const Tensor target = random_tensor({5, 3}, rng);
  const Tensor rmean = random_tensor({4}, rng), rvar = Tensor({4}, 1.7);
  const std::vector<int> ids{0, 5, 2, 2, 3};

  std::vector<std::pair<std::string, GradCheckResult>> out;
  auto check = [&](const char* what, std::vector<Parameter*> ps, const std::function<Var(Tape&)>& fn) {
    out.emplace_back(what, grad_check(ps, fn));
  };
  // Fixed random weighting so that every output entry matters.
  auto to_scalar = [&](Var v) {
    Rng wr(seed + 13);
    Tensor w(v.shape());
    for (auto& x : w.data()) x = wr.normal();
    return ad::sum(ad::mul(v, v.tape->constant(w)));
  };

  check("matmul", {&a, &b}, [&](Tape& t) { return to_scalar(ad::matmul(t.parameter(a), t.parameter(b))); });
  check("matmul_nt", {&a, &c}, [&](Tape& t) { return to_scalar(ad::matmul_nt(t.parameter(a), t.parameter(c))); });
  check("linear", {&a, &b, &bias},
        [&](Tape& t) { return to_scalar(ad::linear(t.parameter(a), t.parameter(b), t.parameter(bias))); });
  check("add", {&a, &c}, [&](Tape& t) { return to_scalar(ad::add(t.parameter(a), t.parameter(c))); });
  check("mul", {&a, &c}, [&](Tape& t) { return to_scalar(ad::mul(t.parameter(a), t.parameter(c))); });
  check("scale", {&a}, [&](Tape& t) { return to_scalar(ad::scale(t.parameter(a), -0.7)); });
  check("sum", {&a}, [&](Tape& t) { return ad::sum(t.parameter(a)); });
  check("leaky_relu", {&a}, [&](Tape& t) { return to_scalar(ad::leaky_relu(t.parameter(a), 0.01)); });
  check("batch_norm_train", {&a, &gamma, &beta}, [&](Tape& t) {
    return to_scalar(ad::batch_norm_train(t.parameter(a), t.parameter(gamma), t.parameter(beta), 1e-5));
  });
  check("batch_norm_eval", {&a, &gamma, &beta}, [&](Tape& t) {
    return to_scalar(ad::batch_norm_eval(t.parameter(a), t.parameter(gamma), t.parameter(beta), rmean, rvar, 1e-5));
  });
  check("dropout", {&a}, [&](Tape& t) {
    Rng r(8);
    return to_scalar(ad::dropout(t.parameter(a), 0.5, r));
  });
  check("embedding", {&table}, [&](Tape& t) { return to_scalar(ad::embedding(t.parameter(table), ids)); });
  check("concat_cols", {&a, &c},
        [&](Tape& t) { return to_scalar(ad::concat_cols({t.parameter(a), t.parameter(c)})); });
  check("slice_cols", {&a}, [&](Tape& t) { return to_scalar(ad::slice_cols(t.parameter(a), 1, 2)); });
  check("slice_rows", {&a}, [&](Tape& t) { return to_scalar(ad::slice_rows(t.parameter(a), 1, 3)); });
  check("chunk_mix", {&a, &alpha}, [&](Tape& t) { return to_scalar(ad::chunk_mix(t.parameter(a), t.parameter(alpha), 1)); });
  check("chunk_mix_wide", {&a, &sq}, [&](Tape& t) {
    auto x = ad::concat_cols({t.parameter(a), t.parameter(a)});  // 8 columns, chunks of 2
    return to_scalar(ad::chunk_mix(x, t.parameter(sq), 2));
  });
  check("mse_loss", {&pred}, [&](Tape& t) { return ad::mse_loss(t.parameter(pred), t.constant(target)); });
  return out;
}

}  // namespace mtl::testing
