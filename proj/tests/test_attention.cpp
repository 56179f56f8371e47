#include "doctest.h"
#include "oracles.hpp"

#include <filesystem>

#include "semidense/attention.hpp"
#include "semidense/io.hpp"

using namespace semidense;
using namespace semidense::test;

TEST_CASE("linear attention equals the quadratic kernel sum") {
  CounterRng rng(201);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::Index n = 1 + static_cast<Eigen::Index>(rng.below(64));
    const Eigen::Index m = 1 + static_cast<Eigen::Index>(rng.below(64));
    const Eigen::Index c = 1 + static_cast<Eigen::Index>(rng.below(32));
    const RowMatrix q = random_matrix(rng, n, c);
    const RowMatrix k = random_matrix(rng, m, c);
    const RowMatrix v = random_matrix(rng, m, c);
    const RowMatrix fast = linear_attention(q, k, v);
    const RowMatrix slow = quadratic_attention(q, k, v);
    worst = std::max(worst, (fast - slow).cwiseAbs().maxCoeff() / std::max(1.0, slow.cwiseAbs().maxCoeff()));
  }
  CHECK(worst < 1e-10);
}

TEST_CASE("a single key returns its value whatever the key") {
  CounterRng rng(202);
  const RowMatrix q = random_matrix(rng, 10, 8);
  const RowMatrix v = random_matrix(rng, 1, 8);
  for (int i = 0; i < 5; ++i) {
    const RowMatrix out = linear_attention(q, random_matrix(rng, 1, 8, 3.0), v);
    for (Eigen::Index r = 0; r < out.rows(); ++r) CHECK((out.row(r) - v.row(0)).norm() < 1e-12);
  }
}

TEST_CASE("identical value rows pass through unchanged") {
  CounterRng rng(203);
  const Eigen::RowVectorXd row = random_matrix(rng, 1, 16).row(0);
  const RowMatrix v = row.replicate(20, 1);
  const RowMatrix out = linear_attention(random_matrix(rng, 7, 16), random_matrix(rng, 20, 16), v);
  for (Eigen::Index r = 0; r < out.rows(); ++r) CHECK((out.row(r) - row).norm() < 1e-12);
}

TEST_CASE("attention dimension mismatches are argument errors") {
  CounterRng rng(204);
  CHECK_THROWS_AS(linear_attention(random_matrix(rng, 3, 4), random_matrix(rng, 3, 5), random_matrix(rng, 3, 4)),
                  Error);
  CHECK_THROWS_AS(linear_attention(random_matrix(rng, 3, 4), random_matrix(rng, 3, 4), random_matrix(rng, 2, 4)),
                  Error);
  const AttentionStack s = AttentionStack::seeded(1, 8, 1);
  RowMatrix a = random_matrix(rng, 3, 8);
  RowMatrix b = random_matrix(rng, 4, 6);
  CHECK_THROWS_AS(s.forward(a, b), Error);
  AttentionWeights w = s.layers()[0].self;
  w.ff1 = RowMatrix::Zero(8, 7);
  CHECK_THROWS_AS(w.validate(8), Error);
  w.ff1 = RowMatrix::Constant(8, 8, std::nan(""));
  CHECK_THROWS_AS(w.validate(8), Error);
}

TEST_CASE("sinusoidal encoding") {
  SUBCASE("leftover channels are constant zero") {
    RowMatrix pos(64 * 64, 3);
    for (int i = 0; i < 64 * 64; ++i) pos.row(i) << (i % 64) / 63.0, (i / 64) / 63.0, 0.5;
    const RowMatrix pe = sinusoidal_encoding(pos, 128);  // 21 frequencies per axis, 2 spare channels
    CHECK(pe.col(126).cwiseAbs().maxCoeff() == 0.0);
    CHECK(pe.col(127).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("norm bound and injectivity on a 64x64 grid") {
    RowMatrix pos(64 * 64, 2);
    for (int i = 0; i < 64 * 64; ++i) pos.row(i) << (i % 64) / 63.0, (i / 64) / 63.0;
    for (int c : {64, 128, 130}) {
      const RowMatrix pe = sinusoidal_encoding(pos, c);
      for (Eigen::Index i = 0; i < pe.rows(); ++i) CHECK(pe.row(i).norm() <= std::sqrt(static_cast<double>(c)) + 1e-12);
    }
    const RowMatrix features = RowMatrix::Constant(64 * 64, 64, 0.125);
    const RowMatrix enc = positional_encode(features, pos, 1.0);
    double min_gap = 1e300;
    for (Eigen::Index i = 0; i < enc.rows(); ++i) {
      CHECK(enc.row(i).norm() == doctest::Approx(1.0).epsilon(1e-12));
      // Neighbours are the closest pairs on the grid.
      if (i % 64 != 63) min_gap = std::min(min_gap, (enc.row(i) - enc.row(i + 1)).norm());
      if (i + 64 < enc.rows()) min_gap = std::min(min_gap, (enc.row(i) - enc.row(i + 64)).norm());
    }
    CHECK(min_gap > 1e-3);
  }
  SUBCASE("invalid input") {
    CHECK_THROWS_AS(sinusoidal_encoding(RowMatrix(3, 0), 16), Error);
    RowMatrix bad = RowMatrix::Zero(2, 2);
    bad(1, 1) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(sinusoidal_encoding(bad, 16), Error);
    CHECK_THROWS_AS(positional_encode(RowMatrix::Zero(3, 8), RowMatrix::Zero(2, 2), 1.0), Error);
  }
}

TEST_CASE("attention stack round-trips through FMAT") {
  const AttentionStack s = AttentionStack::seeded(3, 16, 77);
  CHECK(s.num_layers() == 3);
  FmatFile f;
  s.to_fmat(f);
  const auto path = std::filesystem::temp_directory_path() / "semidense_stack.fmat";
  f.write(path.string());
  const AttentionStack loaded = AttentionStack::from_fmat(FmatFile::read(path.string()), 16);
  REQUIRE(loaded.num_layers() == 3);
  CounterRng rng(205);
  RowMatrix a = random_matrix(rng, 12, 16), b = random_matrix(rng, 30, 16);
  RowMatrix a2 = a, b2 = b;
  s.forward(a, b);
  loaded.forward(a2, b2);
  CHECK(a == a2);
  CHECK(b == b2);
  CHECK(a.allFinite());
  CHECK_THROWS_AS(AttentionStack::from_fmat(FmatFile::read(path.string()), 8), Error);
  std::filesystem::remove(path);
}

TEST_CASE("seeded stacks are deterministic and distinct per seed") {
  const auto a = AttentionStack::seeded(1, 8, 5);
  const auto b = AttentionStack::seeded(1, 8, 5);
  const auto c = AttentionStack::seeded(1, 8, 6);
  CHECK(a.layers()[0].cross.q == b.layers()[0].cross.q);
  CHECK(a.layers()[0].cross.q != c.layers()[0].cross.q);
}
