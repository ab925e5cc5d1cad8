#include "denet/dynamic_erasing.hpp"
#include "denet/error.hpp"
#include "support.hpp"

#include <doctest.h>

using namespace denet;

namespace {

SegmentScores vec(std::initializer_list<double> v) {
  SegmentScores s(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) s(i++) = x;
  return s;
}

Matrix mat(Eigen::Index rows, Eigen::Index cols, std::initializer_list<double> v) {
  Matrix m(rows, cols);
  Eigen::Index i = 0;
  for (double x : v) {
    m(i / cols, i % cols) = x;
    ++i;
  }
  return m;
}

}  // namespace

TEST_SUITE("dynamic_erasing") {

TEST_CASE("extreme indices") {
  CHECK(extreme_indices(vec({0.1, 0.9, 0.4})) == std::pair<Eigen::Index, Eigen::Index>{1, 0});
  CHECK(extreme_indices(vec({0.5, 0.5})) == std::pair<Eigen::Index, Eigen::Index>{0, 0});
  CHECK(extreme_indices(vec({0.2, 0.7, 0.7, 0.2})) == std::pair<Eigen::Index, Eigen::Index>{1, 0});
  CHECK_THROWS_AS(extreme_indices(SegmentScores()), DomainError);
}

TEST_CASE("extreme indices match a linear scan on random vectors") {
  Rng rng(1);
  std::uniform_int_distribution<int> level(0, 9);  // coarse values force ties
  for (int rep = 0; rep < 200; ++rep) {
    SegmentScores s(64);
    for (Eigen::Index i = 0; i < 64; ++i) s(i) = level(rng) / 10.0;
    double best = -1.0, worst = 2.0;
    Eigen::Index hi = -1, lo = -1;
    for (Eigen::Index i = 0; i < 64; ++i) {
      if (s(i) > best) best = s(i), hi = i;
      if (s(i) < worst) worst = s(i), lo = i;
    }
    const auto got = extreme_indices(s);
    CHECK(got.first == hi);
    CHECK(got.second == lo);
  }
}

TEST_CASE("segment similarity") {
  const Matrix x = mat(4, 3, {1, 2, 3, 1, 2, 3, 0, 0, 5, -1, -2, -3});
  CHECK(segment_similarity(x, 0, 1).value == doctest::Approx(1.0));
  CHECK(segment_similarity(mat(2, 2, {1, 0, 0, 1}), 0, 1).value == 0.0);
  CHECK(segment_similarity(x, 0, 3).value == doctest::Approx(-1.0));
  const Matrix z = mat(2, 2, {0, 0, 1, 1});
  const Similarity s = segment_similarity(z, 0, 1);
  CHECK(s.value == 0.0);
  CHECK(s.degenerate);
  CHECK_FALSE(segment_similarity(x, 0, 2).degenerate);
  // same row: exactly 1, not 1 - eps
  const Matrix odd = mat(1, 3, {0.1, 0.7, 0.3});
  CHECK(segment_similarity(odd, 0, 0).value == 1.0);
}

TEST_CASE("completeness and erase memory") {
  const std::vector<double> two = {0.8, 0.8};
  CHECK(completeness(0.9, two) == doctest::Approx(0.1));
  CHECK(erase_memory(completeness(0.9, two)) == 0);
  CHECK(completeness(0.8, two) == 0.0);
  CHECK(erase_memory(0.0) == 1);
  const std::vector<double> one = {0.9};
  CHECK(completeness(0.2, one) == doctest::Approx(-0.7));
  CHECK(erase_memory(-0.7) == 1);
  CHECK_THROWS_AS(completeness(0.5, std::vector<double>{}), DomainError);
}

TEST_CASE("erase zeroes rows strictly above delta") {
  Rng rng(2);
  const Matrix x = test::random_matrix(3, 4, rng);
  auto [xe, d] = erase(x, vec({0.9, 0.5, 0.85}), 1, 0.8);
  CHECK(xe.row(0).isZero());
  CHECK(xe.row(1) == x.row(1));
  CHECK(xe.row(2).isZero());
  CHECK(d.erased_indices == std::vector<Eigen::Index>{0, 2});
  CHECK(d.era_m == 1);
  CHECK(d.delta == 0.8);

  auto [same, d0] = erase(x, vec({0.9, 0.95, 0.99}), 0, 0.8);
  CHECK(same == x);
  CHECK(d0.erased_indices.empty());

  auto [all, da] = erase(x, vec({0.81, 0.95, 0.99}), 1, 0.8);
  CHECK(all.isZero());
  CHECK(da.erased_indices.size() == 3);

  auto [edge, de] = erase(x, vec({0.8, 0.8, 0.8}), 1, 0.8);
  CHECK(edge == x);
  CHECK_THROWS_AS(erase(x, vec({0.1}), 1, 0.8), ShapeError);
}

TEST_CASE("a complete abnormal video is left alone") {
  // sim_a = 1 (rows 0 and 1 parallel), normal sim = 0.9 -> completeness 0.1
  const Matrix a = mat(2, 2, {1, 1, 2, 2});
  const SegmentScores sa = vec({0.95, 0.1});
  const Matrix n = mat(2, 2, {1, 0, 0.9, std::sqrt(1 - 0.81)});
  const SegmentScores sn = vec({0.3, 0.2});
  const std::vector<ErasureInput> ab = {{"a", &a, &sa}};
  const std::vector<ErasureInput> no = {{"n", &n, &sn}};
  const auto r = apply_batch(ab, no, 0.8);
  REQUIRE(r.decisions.size() == 1);
  CHECK(r.decisions[0].completeness == doctest::Approx(0.1));
  CHECK(r.decisions[0].era_m == 0);
  CHECK(r.erased[0] == a);
}

TEST_CASE("hand-traced batch of two abnormal and two normal videos") {
  // n1: t_h = 1, t_l = 0, cos([0,1],[1,0]) = 0
  const Matrix n1 = mat(3, 2, {1, 0, 0, 1, 1, 1});
  const SegmentScores s_n1 = vec({0.1, 0.3, 0.2});
  // n2: t_h = 0, t_l = 1 (tie with 2 goes to 1), cos([1,1],[2,2]) = 1
  const Matrix n2 = mat(3, 2, {1, 1, 2, 2, 1, 0});
  const SegmentScores s_n2 = vec({0.5, 0.2, 0.2});
  // a1: t_h = 0, t_l = 2, cos([3,4],[0,1]) = 0.8, completeness 0.8 - 0.5 = 0.3
  const Matrix a1 = mat(3, 2, {3, 4, 4, 3, 0, 1});
  const SegmentScores s_a1 = vec({0.9, 0.85, 0.1});
  // a2: t_h = 0, t_l = 1, cos([1,0],[0,2]) = 0, completeness -0.5, erase rows 0, 2
  const Matrix a2 = mat(3, 2, {1, 0, 0, 2, 5, 0});
  const SegmentScores s_a2 = vec({0.95, 0.4, 0.81});

  const std::vector<ErasureInput> ab = {{"a1", &a1, &s_a1}, {"a2", &a2, &s_a2}};
  const std::vector<ErasureInput> no = {{"n1", &n1, &s_n1}, {"n2", &n2, &s_n2}};
  const auto r = apply_batch(ab, no, 0.8);

  REQUIRE(r.normal_sims.size() == 2);
  CHECK(r.normal_sims[0] == 0.0);
  CHECK(r.normal_sims[1] == doctest::Approx(1.0));
  REQUIRE(r.decisions.size() == 2);
  const auto& d1 = r.decisions[0];
  CHECK(d1.video_id == "a1");
  CHECK(d1.t_h == 0);
  CHECK(d1.t_l == 2);
  CHECK(d1.sim == doctest::Approx(0.8));
  CHECK(d1.completeness == doctest::Approx(0.3));
  CHECK(d1.era_m == 0);
  CHECK(d1.erased_indices.empty());
  CHECK(r.erased[0] == a1);

  const auto& d2 = r.decisions[1];
  CHECK(d2.t_h == 0);
  CHECK(d2.t_l == 1);
  CHECK(d2.sim == 0.0);
  CHECK(d2.completeness == doctest::Approx(-0.5));
  CHECK(d2.era_m == 1);
  CHECK(d2.erased_indices == std::vector<Eigen::Index>{0, 2});
  CHECK(r.erased[1] == mat(3, 2, {0, 0, 0, 2, 0, 0}));

  // Static mode erases a1 as well; normal inputs are never modified.
  const auto st = apply_batch(ab, no, 0.8, EraseMode::static_all);
  CHECK(st.decisions[0].era_m == 1);
  CHECK(st.decisions[0].erased_indices == std::vector<Eigen::Index>{0, 1});
  CHECK(n1 == mat(3, 2, {1, 0, 0, 1, 1, 1}));
}

TEST_CASE("empty abnormal side is a no-op; no normals is an error") {
  const Matrix n = mat(2, 2, {1, 0, 0, 1});
  const SegmentScores s = vec({0.3, 0.2});
  const std::vector<ErasureInput> no = {{"n", &n, &s}};
  const auto r = apply_batch({}, no, 0.8);
  CHECK(r.decisions.empty());
  CHECK(r.erased.empty());
  const std::vector<ErasureInput> ab = {{"a", &n, &s}};
  CHECK_THROWS_AS(apply_batch(ab, {}, 0.8), DomainError);
}

TEST_CASE("decision json carries the audit fields") {
  const Matrix a = mat(2, 2, {1, 0, 0, 1});
  const SegmentScores s = vec({0.9, 0.1});
  const std::vector<ErasureInput> ab = {{"vid", &a, &s}};
  const std::vector<ErasureInput> no = {{"n", &a, &s}};
  const auto j = apply_batch(ab, no, 0.8).decisions[0].to_json();
  for (const char* k : {"video_id", "t_h", "t_l", "sim", "completeness", "era_m", "erased_indices", "delta"}) {
    CHECK(j.contains(k));
  }
  CHECK(j["erased_indices"] == nlohmann::json::array({0}));
}

}  // TEST_SUITE
