#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "mtlforge/data/dataset.hpp"
#include "mtlforge/data/series.hpp"
#include "mtlforge/error.hpp"
#include "mtlforge/random.hpp"

namespace mtl {

enum class Nonlinearity { linear, power_curve };

inline std::string_view nonlinearity_name(Nonlinearity n) {
  return n == Nonlinearity::linear ? "linear" : "power_curve";
}

inline Nonlinearity parse_nonlinearity(std::string_view s) {
  if (s == "linear") return Nonlinearity::linear;
  if (s == "power_curve") return Nonlinearity::power_curve;
  throw UsageError("unknown nonlinearity '" + std::string(s) + "'");
}

/// Family of related regression tasks.
///
/// A shared latent z and per-task latents e_t (unit-variance AR(1) series)
/// give task inputs x_t = sqrt(rho) z + sqrt(1-rho) e_t. The target is
/// rho f(x_t) + (1-rho) g_t(x_t) + noise with one shared read-out f and
/// per-task read-outs g_t. With `power_curve`, feature 0 plays the role of
/// wind speed and enters through a logistic curve.
struct SyntheticSpec {
  std::size_t n_tasks = 4;
  std::size_t n_features = 4;
  double relatedness = 0.5;
  Nonlinearity nonlinearity = Nonlinearity::linear;
  double noise = 0.3;
  std::size_t n_samples = 4000;
  std::uint64_t seed = 0;
  Timestamp start = make_timestamp(2015, 1, 1);
  Timestamp step_seconds = 3 * kSecondsPerHour;
  double autocorrelation = 0.8;

  void validate() const {
    require(n_tasks >= 1, "synthetic: n_tasks must be >= 1");
    require(n_features >= 1, "synthetic: n_features must be >= 1");
    require(relatedness >= 0.0 && relatedness <= 1.0, "synthetic: relatedness must lie in [0,1]");
    require(noise >= 0.0, "synthetic: noise must be >= 0");
    require(n_samples >= 10, "synthetic: need at least 10 samples");
    require(step_seconds > 0, "synthetic: step must be positive");
    require(autocorrelation >= 0.0 && autocorrelation < 1.0, "synthetic: autocorrelation must lie in [0,1)");
  }

  friend bool operator==(const SyntheticSpec&, const SyntheticSpec&) = default;
};

namespace detail {

struct Readout {
  std::vector<double> weights;
  double midpoint = 0.0;  // logistic centre for the power curve
};

inline Readout draw_readout(std::size_t d, Rng& rng, bool task_specific) {
  Readout r;
  for (std::size_t j = 0; j < d; ++j) r.weights.push_back(rng.normal() / std::sqrt(static_cast<double>(d)));
  r.midpoint = task_specific ? rng.uniform(-1.0, 1.0) : 0.0;
  return r;
}

inline double evaluate(const Readout& r, const double* x, std::size_t d, Nonlinearity nl) {
  double y = 0.0;
  std::size_t j0 = 0;
  if (nl == Nonlinearity::power_curve) {
    y += 2.0 / (1.0 + std::exp(-2.5 * (x[0] - r.midpoint)));
    j0 = 1;
  }
  for (std::size_t j = j0; j < d; ++j) y += r.weights[j] * x[j];
  return y;
}

inline std::vector<double> ar1_paths(std::size_t n, std::size_t d, double phi, Rng& rng) {
  std::vector<double> z(n * d);
  const double innovation = std::sqrt(1.0 - phi * phi);
  for (std::size_t j = 0; j < d; ++j) z[j] = rng.normal();
  for (std::size_t i = 1; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) z[i * d + j] = phi * z[(i - 1) * d + j] + innovation * rng.normal();
  return z;
}

}  // namespace detail

/// Raw series, one per task, sharing the same timestamps.
inline std::vector<RawSeries> generate_synthetic_series(const SyntheticSpec& spec) {
  spec.validate();
  const std::size_t n = spec.n_samples, d = spec.n_features;
  const double rho = spec.relatedness;
  const double a = std::sqrt(rho), b = std::sqrt(1.0 - rho);

  Rng shared(mix_seed(spec.seed, 0x5eed));
  const auto z = detail::ar1_paths(n, d, spec.autocorrelation, shared);
  const auto f = detail::draw_readout(d, shared, false);

  std::vector<RawSeries> out;
  std::vector<double> x(d);
  for (std::size_t t = 0; t < spec.n_tasks; ++t) {
    Rng rng(mix_seed(spec.seed + t, 0x7a5c));
    const auto e = detail::ar1_paths(n, d, spec.autocorrelation, rng);
    const auto g = detail::draw_readout(d, rng, true);
    RawSeries s;
    s.task_name = "task" + std::to_string(t);
    for (std::size_t j = 0; j < d; ++j) s.feature_names.push_back(j == 0 ? "wind_speed" : "x" + std::to_string(j));
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d; ++j) x[j] = a * z[i * d + j] + b * e[i * d + j];
      const double y = rho * detail::evaluate(f, x.data(), d, spec.nonlinearity) +
                       (1.0 - rho) * detail::evaluate(g, x.data(), d, spec.nonlinearity) + spec.noise * rng.normal();
      s.push_row(spec.start + static_cast<Timestamp>(i) * spec.step_seconds, x, y);
    }
    out.push_back(std::move(s));
  }
  return out;
}

/// Synthetic tasks pushed through the calendar/split/standardize stages.
/// The last `test_fraction` of the timeline is held out as the test split.
inline std::vector<TaskDataset> generate_synthetic(const SyntheticSpec& spec, double train_fraction = 0.8,
                                                   double test_fraction = 0.2) {
  PipelineOptions opt;
  opt.seed = spec.seed;
  opt.train_fraction = train_fraction;
  opt.test_fraction = test_fraction;
  return run_pipeline(generate_synthetic_series(spec), opt);
}

}  // namespace mtl
