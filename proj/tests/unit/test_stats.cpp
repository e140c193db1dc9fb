#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "mtlforge/random.hpp"
#include "mtlforge/stats/report.hpp"
#include "support/stats_oracles.hpp"

using namespace mtl;
using namespace mtl::stats;

namespace {

const std::vector<double> zeros(std::size_t n) { return std::vector<double>(n, 0.0); }

std::vector<double> normal_sample(Rng& rng, std::size_t n, double mean = 0.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = mean + rng.normal();
  return v;
}

}  // namespace

TEST(Metrics, RmseExamples) {
  const std::vector<double> p{0, 0}, t{3, 4};
  EXPECT_NEAR(rmse(p, t), std::sqrt(12.5), 1e-15);
  EXPECT_EQ(rmse(t, t), 0.0);
  const std::vector<double> a{1, 2, 3}, b{1.5, 2.5, 3.5};
  EXPECT_NEAR(rmse(a, b), 0.5, 1e-15);
  EXPECT_THROW(rmse(a, p), UsageError);
  EXPECT_THROW(rmse({}, {}), UsageError);
}

TEST(Metrics, SkillScoreExamplesAndProperties) {
  EXPECT_NEAR(skill_score({"ref", {0.0738}}, {"base", {0.0912}}), 0.19079, 5e-6);
  const ModelScores base{"b", {0.3, 0.5, 0.2}}, ref{"r", {0.25, 0.55, 0.1}};
  EXPECT_EQ(skill_score(base, base), 0.0);
  const auto c = skill_contributions(ref, base);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_DOUBLE_EQ(c[k], 1.0 - ref.rmse[k] / base.rmse[k]);
  // skill > 0 iff the mean per-task ratio is below one
  double ratio = 0;
  for (std::size_t k = 0; k < 3; ++k) ratio += ref.rmse[k] / base.rmse[k];
  EXPECT_EQ(skill_score(ref, base) > 0, ratio / 3 < 1);
  // common per-task rescaling leaves the score unchanged
  const std::vector<double> s{2.0, 0.1, 7.5};
  ModelScores bs = base, rs = ref;
  for (std::size_t k = 0; k < 3; ++k) {
    bs.rmse[k] *= s[k];
    rs.rmse[k] *= s[k];
  }
  EXPECT_NEAR(skill_score(rs, bs), skill_score(ref, base), 1e-15);
  EXPECT_THROW(skill_score(ref, {"b", {0.3, 0.0, 0.2}}), DataError);
  EXPECT_THROW(skill_score(ref, {"b", {0.3}}), UsageError);
}

TEST(Metrics, PearsonExamples) {
  const std::vector<double> x{1, 2, 3}, y{1, 3, 2};
  EXPECT_NEAR(pearson(x, y), 0.5, 1e-15);
  std::vector<double> affine, neg;
  for (double v : x) {
    affine.push_back(2 * v + 1);
    neg.push_back(-v);
  }
  EXPECT_NEAR(pearson(x, affine), 1.0, 1e-15);
  EXPECT_NEAR(pearson(x, neg), -1.0, 1e-15);
  const std::vector<double> flat{2, 2, 2};
  EXPECT_THROW(pearson(x, flat), DataError);
}

TEST(Distributions, NormalQuantileInvertsCdf) {
  for (double p : {1e-300, 1e-12, 1e-5, 0.01, 0.2, 0.5, 0.7, 0.975, 1 - 1e-9}) {
    const double z = normal_quantile(p);
    EXPECT_NEAR(normal_cdf(z), p, 1e-14 + 1e-12 * p) << p;
  }
  EXPECT_NEAR(normal_quantile(0.975), 1.959963984540054, 1e-14);
  EXPECT_EQ(normal_quantile(0.5), 0.0);
}

TEST(Distributions, StudentTMatchesClosedFormForEveryIntegerDf) {
  Rng rng(11);
  for (int df = 1; df <= 30; ++df) {
    for (double t : {0.0, 0.1, 0.7, 1.5, 2.2, 4.0, 9.0, 35.0}) {
      EXPECT_NEAR(student_t_two_sided(t, df), oracle::t_two_sided_closed_form(t, df), 1e-10) << df << " " << t;
      EXPECT_NEAR(student_t_two_sided(-t, df), student_t_two_sided(t, df), 1e-15);
    }
    const double t = std::abs(rng.normal()) * 3;
    EXPECT_NEAR(student_t_two_sided(t, df), oracle::t_two_sided_closed_form(t, df), 1e-10) << df << " " << t;
  }
}

TEST(Wilcoxon, SixUnitDifferences) {
  const std::vector<double> a(6, 1.0);
  const auto r = wilcoxon_signed_rank(a, zeros(6));
  EXPECT_EQ(r.test, "wilcoxon");
  EXPECT_EQ(r.statistic, 0.0);
  EXPECT_DOUBLE_EQ(r.p_value, 0.03125);
  EXPECT_FALSE(r.significant);
}

TEST(Wilcoxon, AntisymmetricDifferencesSitAtTheCentre) {
  const std::vector<double> d{1, -1, 2, -2, 3, -3};
  const auto r = wilcoxon_signed_rank(d, zeros(6));
  EXPECT_DOUBLE_EQ(r.p_value, 1.0);
  EXPECT_DOUBLE_EQ(r.statistic, 10.5);
}

TEST(Wilcoxon, ExactPValuesMatchSignEnumeration) {
  Rng rng(2024);
  int checked = 0;
  for (std::size_t k = 6; k <= 12; ++k) {
    for (int rep = 0; rep < 12; ++rep) {
      std::vector<double> d(k);
      const bool ties = rep % 3 == 0;
      for (auto& x : d) x = ties ? std::round((0.4 + rng.normal()) * 2) / 2 : (0.4 + rng.normal());
      std::vector<double> kept;
      for (double x : d)
        if (x != 0) kept.push_back(x);
      if (kept.size() < kWilcoxonMinPairs) continue;
      const auto r = wilcoxon_signed_rank(d, zeros(k));
      EXPECT_NEAR(r.p_value, oracle::wilcoxon_enumerated_p(kept), 1e-12) << "K=" << k << " rep " << rep;
      EXPECT_EQ(r.pairs, kept.size());
      ++checked;
    }
  }
  EXPECT_GT(checked, 70);
}

TEST(Wilcoxon, NormalApproximationMatchesReference) {
  struct Case {
    double stat, p;
    std::vector<double> d;
  };
  const std::vector<Case> cases{
#include "support/wilcoxon_reference.inc"
  };
  for (const auto& c : cases) {
    const auto r = wilcoxon_signed_rank(c.d, zeros(c.d.size()));
    EXPECT_DOUBLE_EQ(r.statistic, c.stat);
    EXPECT_NEAR(r.p_value, c.p, 1e-12);
  }
}

TEST(Wilcoxon, NormalApproximationIsCalibratedAtK23) {
  Rng rng(99);
  const int sims = 10000;
  int rejected = 0;
  for (int s = 0; s < sims; ++s) {
    const auto d = normal_sample(rng, 23);
    if (wilcoxon_signed_rank(d, zeros(23)).significant) ++rejected;
  }
  const double rate = static_cast<double>(rejected) / sims;
  EXPECT_NEAR(rate, 0.01, 0.005) << rate;
}

TEST(Wilcoxon, Errors) {
  EXPECT_THROW(wilcoxon_signed_rank(zeros(8), zeros(8)), DataError);
  const std::vector<double> five{1, 2, 3, 4, 5, 0};
  EXPECT_THROW(wilcoxon_signed_rank(five, zeros(6)), UsageError);
  EXPECT_THROW(wilcoxon_signed_rank(five, zeros(5)), UsageError);
}

TEST(ShapiroWilk, MatchesReferenceOnCannedSamples) {
  struct Case {
    const char* kind;
    double w, p;
    std::vector<double> x;
  };
  const std::vector<Case> cases{
#include "support/shapiro_reference.inc"
  };
  ASSERT_EQ(cases.size(), 20u);
  for (const auto& c : cases) {
    const auto r = shapiro_wilk(c.x);
    EXPECT_NEAR(r.w, c.w, 1e-6) << c.kind << " n=" << c.x.size();
    EXPECT_NEAR(r.p_value, c.p, 1e-5) << c.kind << " n=" << c.x.size();
  }
}

TEST(ShapiroWilk, Examples) {
  std::vector<double> q;
  for (int i = 1; i <= 20; ++i) q.push_back(normal_quantile((i - 0.375) / 20.25));
  EXPECT_GT(shapiro_wilk(q).w, 0.98);
  std::vector<double> bimodal;
  for (int i = 0; i < 10; ++i) {
    bimodal.push_back(1);
    bimodal.push_back(-1);
  }
  EXPECT_LT(shapiro_wilk(bimodal).p_value, 0.01);
  Rng rng(5);
  for (std::size_t n : {3u, 4u, 8u, 30u}) {
    const auto x = normal_sample(rng, n);
    std::vector<double> y;
    for (double v : x) y.push_back(3.7 * v - 12.0);
    EXPECT_NEAR(shapiro_wilk(x).w, shapiro_wilk(y).w, 1e-10);
  }
  EXPECT_THROW(shapiro_wilk(std::vector<double>{1, 2}), UsageError);
  EXPECT_THROW(shapiro_wilk(std::vector<double>(5001, 1.0)), UsageError);
  EXPECT_THROW(shapiro_wilk(std::vector<double>{4, 4, 4, 4}), DataError);
}

TEST(TTest, Examples) {
  const std::vector<double> d{1, 2, 3, 4, 5};
  const auto r = paired_t_test(d, zeros(5));
  EXPECT_EQ(r.test, "t_test");
  EXPECT_NEAR(r.statistic, 3.0 / (std::sqrt(2.5) / std::sqrt(5.0)), 1e-12);
  EXPECT_NEAR(r.statistic, 4.2426, 1e-4);
  EXPECT_NEAR(r.p_value, 0.0132, 1e-4);
  EXPECT_NEAR(r.p_value, oracle::t_two_sided_closed_form(r.statistic, 4), 1e-12);
  const std::vector<double> centred{-2, -1, 0, 1, 2};
  const auto z = paired_t_test(centred, zeros(5));
  EXPECT_EQ(z.statistic, 0.0);
  EXPECT_DOUBLE_EQ(z.p_value, 1.0);
  EXPECT_THROW(paired_t_test(std::vector<double>{1, 1, 1}, zeros(3)), DataError);
  EXPECT_THROW(paired_t_test(std::vector<double>{1}, zeros(1)), UsageError);
}

TEST(Significance, PValuesStayInRangeAndIgnoreScale) {
  Rng rng(8);
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t k = 6 + rng.below(30);
    const auto d = normal_sample(rng, k, rng.uniform(-1, 1));
    std::vector<double> scaled;
    const double c = rng.uniform(0.01, 50);
    for (double v : d) scaled.push_back(c * v);
    const auto w = wilcoxon_signed_rank(d, zeros(k));
    const auto ws = wilcoxon_signed_rank(scaled, zeros(k));
    EXPECT_GE(w.p_value, 0.0);
    EXPECT_LE(w.p_value, 1.0);
    EXPECT_EQ(w.statistic, ws.statistic);
    EXPECT_EQ(w.p_value, ws.p_value);
    const auto t = paired_t_test(d, zeros(k));
    const auto ts = paired_t_test(scaled, zeros(k));
    EXPECT_GE(t.p_value, 0.0);
    EXPECT_LE(t.p_value, 1.0);
    EXPECT_NEAR(t.p_value, ts.p_value, 1e-12);
    EXPECT_EQ(t.significant, t.p_value < 0.01);
  }
}

TEST(Significance, SelectionFollowsTaskCount) {
  Rng rng(31);
  const ModelScores base23{"baseline", normal_sample(rng, 23, 5.0)};
  ModelScores m23{"ern", base23.rmse};
  for (auto& v : m23.rmse) v -= 0.3 + 0.2 * rng.normal();
  const auto r23 = select_and_run(m23, base23);
  EXPECT_EQ(r23.test, "wilcoxon");
  EXPECT_FALSE(r23.normality_p.has_value());

  const ModelScores base15{"baseline", normal_sample(rng, 15, 5.0)};
  ModelScores m15{"ern", base15.rmse};
  std::vector<double> q;
  for (int i = 1; i <= 15; ++i) q.push_back(normal_quantile((i - 0.375) / 15.25));
  for (std::size_t k = 0; k < 15; ++k) m15.rmse[k] += 0.1 * q[(k * 7) % 15];
  const auto r15 = select_and_run(m15, base15);
  EXPECT_EQ(r15.test, "t_test");
  ASSERT_TRUE(r15.normality_p.has_value());
  EXPECT_GE(*r15.normality_p, 0.01);
  EXPECT_FALSE(r15.normality_fallback);

  ModelScores bi{"sn", base15.rmse};
  for (std::size_t k = 0; k < 15; ++k) bi.rmse[k] += (k % 2 ? 0.5 : -0.5) + 0.001 * static_cast<double>(k);
  const auto rb = select_and_run(bi, base15);
  EXPECT_EQ(rb.test, "wilcoxon");
  EXPECT_TRUE(rb.normality_fallback);
  ASSERT_TRUE(rb.normality_p.has_value());
  EXPECT_LT(*rb.normality_p, 0.01);

  EXPECT_THROW(select_and_run({"m", {1, 2, 3, 4, 5}}, {"b", {1, 2, 3, 4, 6}}), UsageError);
}

TEST(RmseTableFile, PublishedSolarAndWindSkillScores) {
  const auto solar = load_rmse_table(std::string(MTL_TEST_DATA_DIR) + "/solar_rmse.csv");
  ASSERT_EQ(solar.tasks.size(), 23u);
  const std::vector<std::pair<std::string, double>> solar_expected{
      {"mlpwp", 0.1496}, {"sn", 0.1485}, {"ern", 0.1477}, {"mlpnp", 0.1410}, {"hps", 0.0573}, {"csn", -0.1281}};
  const auto rs = evaluate_table(solar);
  for (const auto& [name, want] : solar_expected) {
    const ModelScores* m = solar.find(name);
    ASSERT_NE(m, nullptr) << name;
    EXPECT_NEAR(skill_score(*m, *solar.find("baseline")), want, 0.005) << name;
  }
  for (const auto& e : rs.models) {
    if (e.model == "baseline") continue;
    ASSERT_TRUE(e.significance) << e.model;
    EXPECT_EQ(e.significance->test, "wilcoxon") << e.model;
  }

  const auto wind = load_rmse_table(std::string(MTL_TEST_DATA_DIR) + "/wind_rmse.csv");
  ASSERT_EQ(wind.tasks.size(), 15u);
  const std::vector<std::pair<std::string, double>> wind_expected{
      {"ern", 0.0774}, {"sn", 0.0354}, {"csn", -0.0409}, {"hps", -0.0256}};
  for (const auto& [name, want] : wind_expected)
    EXPECT_NEAR(skill_score(*wind.find(name), *wind.find("baseline")), want, 0.005) << name;
  for (const auto& e : evaluate_table(wind).models) {
    if (e.model == "baseline") continue;
    ASSERT_TRUE(e.significance) << e.model << ": " << e.note;
    EXPECT_TRUE(e.significance->normality_p.has_value()) << e.model;
  }
}

TEST(RmseTableFile, RoundTripAndErrors) {
  const RmseTable t{{"a", "b"}, {{"baseline", {0.1, 0.25}}, {"ern", {0.0999999999999, 1.0 / 3.0}}}};
  std::ostringstream os;
  write_rmse_table(os, t);
  const auto back = parse_rmse_table(os.str());
  EXPECT_EQ(back.tasks, t.tasks);
  for (std::size_t j = 0; j < 2; ++j) EXPECT_EQ(back.models[j].rmse, t.models[j].rmse);
  EXPECT_THROW(parse_rmse_table("model,a\nx,1\n"), DataError);
  EXPECT_THROW(parse_rmse_table("task,a,b\nx,1\n"), DataError);
  EXPECT_THROW(parse_rmse_table("task,a\nx,-1\n"), DataError);
  EXPECT_THROW(parse_rmse_table("task,a\n"), DataError);
  EXPECT_THROW(evaluate_table(back, "mlpwp"), UsageError);
}

TEST(Report, BaselineOnlyAndAsterisks) {
  const RmseTable only{{"t0", "t1"}, {{"baseline", {0.2, 0.3}}}};
  const auto r = evaluate_table(only);
  EXPECT_EQ(r.models[0].skill, 0.0);
  EXPECT_FALSE(r.models[0].significance);

  RmseTable t;
  for (int k = 0; k < 8; ++k) t.tasks.push_back("t" + std::to_string(k));
  t.models = {{"baseline", {}}, {"ern", {}}, {"csn", {}}};
  const std::vector<double> gain{0.05, 0.06, 0.04, 0.055, 0.045, 0.05, 0.052, 0.048};
  for (int k = 0; k < 8; ++k) {
    t.models[0].rmse.push_back(1.0 + 0.1 * k);
    t.models[1].rmse.push_back(1.0 + 0.1 * k - gain[k]);
    t.models[2].rmse.push_back(1.0 + 0.1 * k + (k % 2 ? 0.01 : -0.012));
  }
  const auto rep = evaluate_table(t);
  EXPECT_TRUE(rep.models[1].significant());
  EXPECT_FALSE(rep.models[2].significant());
  std::ostringstream summary, sig;
  write_summary(summary, rep);
  write_significance(sig, rep);
  EXPECT_NE(summary.str().find("ern*"), std::string::npos);
  EXPECT_EQ(summary.str().find("csn*"), std::string::npos);
  EXPECT_NE(summary.str().find("SkillScore"), std::string::npos);
  EXPECT_NE(sig.str().find("baseline,none"), std::string::npos);
}
