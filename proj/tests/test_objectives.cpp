#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <optional>
#include <vector>

#include "oracles.hpp"
#include "test_util.hpp"
#include "tsfm/errors.hpp"
#include "tsfm/objectives.hpp"

using namespace tsfm;

namespace {

Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.uniform(-2.0, 2.0);
  return m;
}

TimeMask flags_mask(std::vector<std::uint8_t> flags, int offset = 0) {
  TimeMask mask;
  mask.region_offset = offset;
  mask.region_length = static_cast<int>(flags.size());
  mask.flags = std::move(flags);
  return mask;
}

TimeMask random_mask(int length, Rng& rng, int offset = 0) {
  std::vector<std::uint8_t> flags(static_cast<std::size_t>(length));
  for (auto& f : flags) f = rng.uniform() < 0.5 ? 1 : 0;
  return flags_mask(std::move(flags), offset);
}

double rel_gap(double a, double b) { return std::abs(a - b) / std::max(1e-12, std::abs(b)); }

}  // namespace

TEST_CASE("local completion loss: hand-checked value") {
  const Eigen::MatrixXd target = Eigen::MatrixXd::Zero(2, 2);
  Eigen::MatrixXd pred(2, 2);
  pred << 1.0, 2.0, 1.0, 2.0;
  const MaskedMse loss = lc_loss(target, pred, flags_mask({1, 1}));
  CHECK(loss.present());
  CHECK(loss.positions == 2);
  CHECK(loss.value == doctest::Approx(2.5).epsilon(1e-15));  // 10 / (2 steps * 2 channels)
}

TEST_CASE("temporal continuity loss: hand-checked value over the horizon") {
  const Eigen::MatrixXd target = Eigen::MatrixXd::Zero(3, 2);
  Eigen::MatrixXd pred(3, 2);
  pred << 7.0, -7.0,  // past row, never counted
      3.0, 1.0, 1.0, 3.0;
  const MaskedMse loss = tc_loss(target, pred, 1, flags_mask({1, 1}, 1));
  CHECK(loss.positions == 2);
  CHECK(loss.value == doctest::Approx(5.0).epsilon(1e-15));  // 20 / (2 * 2)
}

TEST_CASE("temporal continuity loss rejects misplaced masks") {
  const Eigen::MatrixXd m = Eigen::MatrixXd::Zero(4, 1);
  CHECK_THROWS_AS(tc_loss(m, m, 2, flags_mask({1, 1}, 1)), ConfigError);
  CHECK_THROWS_AS(tc_loss(m, m, 2, flags_mask({1, 1, 1}, 2)), ConfigError);
}

TEST_CASE("in-context loss: hand-checked value on a two-row table") {
  std::vector<Window> w(2);
  w[0].values = Eigen::MatrixXd::Constant(2, 1, 0.5);
  w[1].values = Eigen::MatrixXd::Zero(2, 1);
  w[1].values << 1.0, 2.0;
  SupportQueryTable table;
  table.rows = {0, 1};
  table.query_rows = {1};
  table.query_masks = {flags_mask({1, 1})};
  Eigen::MatrixXd pred = Eigen::MatrixXd::Zero(4, 1);
  pred(2, 0) = 3.0;  // query row predictions
  pred(3, 0) = 0.0;
  const std::vector<const Window*> ptrs = {&w[0], &w[1]};
  const MaskedMse loss = uicd_loss(ptrs, table, pred);
  CHECK(loss.positions == 2);
  CHECK(loss.value == doctest::Approx(4.0).epsilon(1e-15));  // (4 + 4) / (2 * 1)
}

TEST_CASE("losses agree with the brute-force references on random instances") {
  Rng rng(2024);
  int lc_present = 0, tc_present = 0, uicd_present = 0;
  for (int rep = 0; rep < 120; ++rep) {
    const int T = static_cast<int>(rng.uniform_int(2, 8));
    const int D = static_cast<int>(rng.uniform_int(1, 4));
    const Eigen::MatrixXd target = random_matrix(T, D, rng);
    const Eigen::MatrixXd pred = random_matrix(T, D, rng);

    const TimeMask mask = random_mask(T, rng);
    const MaskedMse got = lc_loss(target, pred, mask);
    double want = 0.0;
    const bool present = oracle::masked_mse(target, pred, mask.flags, &want);
    CHECK(got.present() == present);
    if (present) {
      ++lc_present;
      CHECK(rel_gap(got.value, want) < 1e-12);
    }

    const int t_past = static_cast<int>(rng.uniform_int(1, T - 1));
    TimeMask future = random_mask(T - t_past, rng, t_past);
    if (future.coverage_count() == 0) future.flags[0] = 1;
    const MaskedMse got_tc = tc_loss(target, pred, t_past, future);
    double want_tc = 0.0;
    const bool tc_ok = oracle::future_mse(target, pred, t_past, future.flags, &want_tc);
    CHECK(got_tc.present() == tc_ok);
    if (tc_ok) {
      ++tc_present;
      CHECK(rel_gap(got_tc.value, want_tc) < 1e-12);
    }
  }
  for (int rep = 0; rep < 120; ++rep) {
    const int R = static_cast<int>(rng.uniform_int(2, 4));
    const int T = static_cast<int>(rng.uniform_int(2, 5));
    const int D = static_cast<int>(rng.uniform_int(1, 3));
    std::vector<Window> w(static_cast<std::size_t>(R));
    std::vector<const Window*> ptrs;
    std::vector<Eigen::MatrixXd> row_targets;
    SupportQueryTable table;
    for (int r = 0; r < R; ++r) {
      w[static_cast<std::size_t>(r)].values = random_matrix(T, D, rng);
      ptrs.push_back(&w[static_cast<std::size_t>(r)]);
      row_targets.push_back(w[static_cast<std::size_t>(r)].values);
      table.rows.push_back(r);
    }
    const int queries = static_cast<int>(rng.uniform_int(1, R - 1));
    std::vector<std::vector<std::uint8_t>> query_flags;
    for (int q = 0; q < queries; ++q) {
      table.query_rows.push_back(R - 1 - q);
      table.query_masks.push_back(random_mask(T, rng));
      query_flags.push_back(table.query_masks.back().flags);
    }
    const Eigen::MatrixXd pred = random_matrix(R * T, D, rng);
    const MaskedMse got = uicd_loss(ptrs, table, pred);
    double want = 0.0;
    const bool present =
        oracle::table_query_mse(row_targets, pred, table.query_rows, query_flags, &want);
    CHECK(got.present() == present);
    if (present) {
      ++uicd_present;
      CHECK(rel_gap(got.value, want) < 1e-12);
    }
  }
  CHECK(lc_present >= 100);
  CHECK(tc_present >= 100);
  CHECK(uicd_present >= 100);
}

TEST_CASE("loss gradients match finite differences") {
  Rng rng(77);
  for (int rep = 0; rep < 20; ++rep) {
    const int T = static_cast<int>(rng.uniform_int(3, 6));
    const int D = static_cast<int>(rng.uniform_int(1, 3));
    const Eigen::MatrixXd target = random_matrix(T, D, rng);
    Eigen::MatrixXd pred = random_matrix(T, D, rng);
    TimeMask mask = random_mask(T, rng);
    mask.flags[0] = 1;  // keep the loss present
    const Eigen::MatrixXd grad = lc_loss_grad(target, pred, mask);
    const double h = 1e-6;
    for (Eigen::Index t = 0; t < T; ++t)
      for (Eigen::Index d = 0; d < D; ++d) {
        const double orig = pred(t, d);
        pred(t, d) = orig + h;
        const double above = lc_loss(target, pred, mask).value;
        pred(t, d) = orig - h;
        const double below = lc_loss(target, pred, mask).value;
        pred(t, d) = orig;
        const double fd = (above - below) / (2.0 * h);
        CHECK(std::abs(fd - grad(t, d)) < 1e-7);
        if (!mask.masked_at(static_cast<int>(t))) CHECK(grad(t, d) == 0.0);
      }
  }
}

TEST_CASE("table loss gradient matches finite differences and spares supports") {
  Rng rng(78);
  std::vector<Window> w(3);
  std::vector<const Window*> ptrs;
  SupportQueryTable table;
  for (int r = 0; r < 3; ++r) {
    w[static_cast<std::size_t>(r)].values = random_matrix(3, 2, rng);
    ptrs.push_back(&w[static_cast<std::size_t>(r)]);
    table.rows.push_back(r);
  }
  table.query_rows = {2};
  table.query_masks = {flags_mask({1, 0, 1})};
  Eigen::MatrixXd pred = random_matrix(9, 2, rng);
  const Eigen::MatrixXd grad = uicd_loss_grad(ptrs, table, pred);
  CHECK(grad.topRows(6).isZero(0.0));  // support rows carry no gradient
  CHECK(grad.row(7).isZero(0.0));      // unmasked query step
  const double h = 1e-6;
  for (Eigen::Index i = 0; i < 9; ++i)
    for (Eigen::Index j = 0; j < 2; ++j) {
      const double orig = pred(i, j);
      pred(i, j) = orig + h;
      const double above = uicd_loss(ptrs, table, pred).value;
      pred(i, j) = orig - h;
      const double below = uicd_loss(ptrs, table, pred).value;
      pred(i, j) = orig;
      CHECK(std::abs((above - below) / (2.0 * h) - grad(i, j)) < 1e-7);
    }
}

TEST_CASE("only masked positions influence the loss") {
  Rng rng(79);
  const Eigen::MatrixXd target = random_matrix(6, 2, rng);
  Eigen::MatrixXd pred = random_matrix(6, 2, rng);
  const TimeMask mask = flags_mask({0, 1, 0, 0, 1, 0});
  const double base = lc_loss(target, pred, mask).value;
  pred.row(0).setConstant(1e6);
  pred.row(3).setConstant(-1e6);
  CHECK(lc_loss(target, pred, mask).value == base);
  Eigen::MatrixXd target2 = target;
  target2.row(2).setConstant(42.0);
  CHECK(lc_loss(target2, pred, mask).value == base);
}

TEST_CASE("the loss is zero exactly when masked predictions are perfect") {
  Rng rng(80);
  const Eigen::MatrixXd target = random_matrix(5, 3, rng);
  Eigen::MatrixXd pred = random_matrix(5, 3, rng);
  const TimeMask mask = flags_mask({1, 0, 1, 0, 0});
  pred.row(0) = target.row(0);
  pred.row(2) = target.row(2);
  CHECK(lc_loss(target, pred, mask).value == 0.0);
  pred(2, 1) += 1e-9;
  CHECK(lc_loss(target, pred, mask).value > 0.0);
}

TEST_CASE("an empty mask yields an absent loss and a zero gradient") {
  const Eigen::MatrixXd m = Eigen::MatrixXd::Ones(4, 2);
  const TimeMask mask = flags_mask({0, 0, 0, 0});
  const MaskedMse loss = lc_loss(m, 2.0 * m, mask);
  CHECK(!loss.present());
  CHECK(loss.value == 0.0);
  CHECK(lc_loss_grad(m, 2.0 * m, mask).isZero(0.0));
}

TEST_CASE("joint loss: weighted sum, absent terms contribute nothing") {
  LossWeights w;
  w.lc = 0.5;
  w.tc = 2.0;
  w.uicd = 1.0;
  CHECK(combine_losses(2.0, 3.0, 4.0, w) == doctest::Approx(11.0).epsilon(1e-15));
  CHECK(combine_losses(std::nullopt, 3.0, 4.0, w) == doctest::Approx(10.0).epsilon(1e-15));
  CHECK(combine_losses(std::nullopt, std::nullopt, 4.0, w) == doctest::Approx(4.0).epsilon(1e-15));
  CHECK(combine_losses(2.0, std::nullopt, std::nullopt, LossWeights{}) ==
        doctest::Approx(2.0).epsilon(1e-15));
  CHECK_THROWS_AS(combine_losses(std::nullopt, std::nullopt, std::nullopt, w), ConfigError);
}

TEST_CASE("batch form matches the per-window form") {
  Rng rng(81);
  Window w;
  w.values = random_matrix(7, 3, rng);
  TimeMask mask = random_mask(7, rng);
  mask.flags[1] = 1;
  const TokenBatch batch = make_window_batch({&w}, {&mask});
  const Eigen::MatrixXd pred = random_matrix(7, 3, rng);
  const MaskedMse batch_loss = batch_masked_mse(batch, pred);
  const MaskedMse window_loss = lc_loss(w.values, pred, mask);
  CHECK(batch_loss.value == window_loss.value);
  CHECK(batch_loss.positions == window_loss.positions);
  CHECK(testutil::exact_equal(batch_masked_mse_grad(batch, pred),
                              lc_loss_grad(w.values, pred, mask)));
}

TEST_CASE("batch form pools masked tokens across sequences") {
  Rng rng(82);
  Window a, b;
  a.values = random_matrix(4, 2, rng);
  b.values = random_matrix(4, 2, rng);
  const TimeMask ma = flags_mask({1, 0, 0, 0});
  const TimeMask mb = flags_mask({1, 1, 1, 0});
  const TokenBatch batch = make_window_batch({&a, &b}, {&ma, &mb});
  const Eigen::MatrixXd pred = random_matrix(8, 2, rng);
  const MaskedMse got = batch_masked_mse(batch, pred);
  CHECK(got.positions == 4);
  Eigen::MatrixXd all_targets(8, 2);
  all_targets << a.values, b.values;
  double want = 0.0;
  REQUIRE(oracle::masked_mse(all_targets, pred, {1, 0, 0, 0, 1, 1, 1, 0}, &want));
  CHECK(rel_gap(got.value, want) < 1e-14);
}

TEST_CASE("masked reconstruction loss backpropagates through the encoder") {
  EncoderConfig cfg;
  cfg.input_dim = 2;
  cfg.embed_dim = 8;
  cfg.depth = 1;
  cfg.heads = 2;
  cfg.dropout = 0.0;
  cfg.max_positions = 16;
  EncoderModel model(cfg, 99);
  Rng rng(83);
  Window w1, w2;
  w1.values = random_matrix(5, 2, rng);
  w2.values = random_matrix(5, 2, rng);
  const TimeMask m1 = flags_mask({0, 1, 0, 1, 0});
  const TimeMask m2 = flags_mask({1, 1}, 3);
  const TokenBatch batch = make_window_batch({&w1, &w2}, {&m1, &m2});

  ForwardTrace trace;
  const Eigen::MatrixXd y = model.forward(batch, DecoderHead::kShared, false, nullptr, &trace);
  model.params().zero_grads();
  model.backward(batch, trace, batch_masked_mse_grad(batch, y), DecoderHead::kShared);

  const double h = 1e-5;
  double worst = 0.0;
  for (int pi = 0; pi < model.params().size(); ++pi) {
    ParamTensor& p = model.params().at(pi);
    for (Eigen::Index r = 0; r < p.value.rows(); ++r)
      for (Eigen::Index c = 0; c < p.value.cols(); ++c) {
        const double orig = p.value(r, c);
        p.value(r, c) = orig + h;
        const double above =
            batch_masked_mse(batch, model.forward(batch, DecoderHead::kShared, false, nullptr,
                                                  nullptr))
                .value;
        p.value(r, c) = orig - h;
        const double below =
            batch_masked_mse(batch, model.forward(batch, DecoderHead::kShared, false, nullptr,
                                                  nullptr))
                .value;
        p.value(r, c) = orig;
        const double fd = (above - below) / (2.0 * h);
        const double an = p.grad(r, c);
        worst = std::max(worst, std::abs(fd - an) / std::max(1e-6, std::abs(fd) + std::abs(an)));
      }
  }
  CHECK(worst < 1e-4);  // loss-scale gradients are tiny; noise dominates below this
}
