#include <gtest/gtest.h>

#include <cmath>

#include "mtabnet/random.hpp"
#include "mtabnet/smogn.hpp"

using namespace mtabnet;

namespace {

Schema schema() {
  return Schema({
      {"a", ColumnKind::kContinuous, "phys", {}, "", false},
      {"b", ColumnKind::kContinuous, "phys", {}, "", false},
      {"c", ColumnKind::kCategorical, "lifestyle", {"x", "y", "z"}, "", false},
      {"y", ColumnKind::kContinuous, "target", {}, "g", false},
  });
}

/// Dense bulk near 3300 g plus a thin low tail near 2000 g.
Dataset bimodal(std::size_t bulk, std::size_t tail, std::uint64_t seed) {
  Rng rng(seed);
  Dataset d{schema(), std::vector<std::vector<double>>(4)};
  for (std::size_t i = 0; i < bulk + tail; ++i) {
    const bool low = i >= bulk;
    d.columns[0].push_back(rng.uniform(0, 1) + (low ? 0.0 : 0.5));
    d.columns[1].push_back(rng.uniform(0, 1));
    d.columns[2].push_back(static_cast<double>(rng.index(3)));
    d.columns[3].push_back(low ? rng.normal(2000, 60) : rng.normal(3300, 120));
  }
  return d;
}

std::size_t rare_count(const Dataset& d, const Relevance& phi, double threshold) {
  std::size_t n = 0;
  for (double y : d.target()) n += phi(y) > threshold;
  return n;
}

}  // namespace

TEST(Relevance, ShapeAndBounds) {
  const Relevance phi({1, 2, 3, 4, 5, 6, 7, 8, 9});
  EXPECT_DOUBLE_EQ(phi(5.0), 0.0);
  EXPECT_DOUBLE_EQ(phi(-100.0), 1.0);
  EXPECT_DOUBLE_EQ(phi(100.0), 1.0);
  EXPECT_LT(phi(6.0), phi(8.0));
  EXPECT_DOUBLE_EQ(Relevance({2, 2, 2, 2, 2})(100.0), 0.0);
  EXPECT_THROW(Relevance({1, 2}), DataError);
}

TEST(Smogn, RareCountGrowsAndOriginalsUntouched) {
  const Dataset d = bimodal(200, 20, 5);
  const SmognConfig cfg;
  const SmognResult r = smogn_augment(d, cfg, 9);
  const Relevance phi(d.target());
  EXPECT_GT(rare_count(r.data, phi, cfg.threshold), rare_count(d, phi, cfg.threshold));
  EXPECT_EQ(r.original_rows, d.rows());
  EXPECT_EQ(r.data.rows(), d.rows() + r.origins.size());
  for (std::size_t c = 0; c < d.columns.size(); ++c) {
    for (std::size_t i = 0; i < d.rows(); ++i) EXPECT_EQ(r.data.columns[c][i], d.columns[c][i]);
  }
  for (std::size_t i = 0; i < r.origins.size(); ++i) {
    const double v = r.data.columns[2][d.rows() + i];
    EXPECT_TRUE(v == 0.0 || v == 1.0 || v == 2.0);
  }
}

TEST(Smogn, SmoterSamplesLieOnTheParentSegment) {
  const Dataset d = bimodal(200, 20, 6);
  const SmognResult r = smogn_augment(d, {}, 4);
  std::size_t smoter = 0;
  for (std::size_t i = 0; i < r.origins.size(); ++i) {
    const SyntheticOrigin& o = r.origins[i];
    if (o.neighbour == SyntheticOrigin{}.neighbour) continue;
    ++smoter;
    const std::size_t s = d.rows() + i;
    auto at = [&](std::size_t c, std::size_t row) { return r.data.columns[c][row]; };
    // Continuous features: one shared u in [0,1].
    const double da = at(0, o.neighbour) - at(0, o.seed);
    const double u = da != 0.0 ? (at(0, s) - at(0, o.seed)) / da : 0.0;
    EXPECT_GE(u, 0.0);
    EXPECT_LE(u, 1.0);
    for (std::size_t c : {0u, 1u}) {
      const double lo = std::min(at(c, o.seed), at(c, o.neighbour));
      const double hi = std::max(at(c, o.seed), at(c, o.neighbour));
      EXPECT_GE(at(c, s), lo);
      EXPECT_LE(at(c, s), hi);
      EXPECT_NEAR(at(c, s), at(c, o.seed) + u * (at(c, o.neighbour) - at(c, o.seed)), 1e-12);
    }
    EXPECT_TRUE(at(2, s) == at(2, o.seed) || at(2, s) == at(2, o.neighbour));
    EXPECT_GE(at(3, s), std::min(at(3, o.seed), at(3, o.neighbour)));
    EXPECT_LE(at(3, s), std::max(at(3, o.seed), at(3, o.neighbour)));
  }
  EXPECT_GT(smoter, 0u);
}

TEST(Smogn, NoRareRowsIsIdentity) {
  Dataset d{schema(), {{0, 1, 2, 3}, {0, 1, 0, 1}, {0, 1, 2, 0}, {3000, 3000, 3000, 3000}}};
  const SmognResult r = smogn_augment(d, {}, 1);
  EXPECT_TRUE(r.no_rare);
  EXPECT_EQ(to_csv(r.data), to_csv(d));
}

TEST(Smogn, DeterministicAndValidated) {
  const Dataset d = bimodal(100, 10, 2);
  EXPECT_EQ(to_csv(smogn_augment(d, {}, 3).data), to_csv(smogn_augment(d, {}, 3).data));
  SmognConfig bad;
  bad.threshold = 1.0;
  EXPECT_THROW(smogn_augment(d, bad, 1), ConfigError);
  bad = SmognConfig{};
  bad.k = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
  const SmognConfig back = SmognConfig::from_json(SmognConfig{}.to_json());
  EXPECT_EQ(back.to_json(), SmognConfig{}.to_json());
}
