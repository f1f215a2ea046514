#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "salab/attention.hpp"
#include "salab/gradcheck.hpp"

using namespace salab;
using namespace salab::attn;
using nn::Tape;
using nn::Tensor;

namespace {

Tensor<double> random_tensor(nn::Shape shape, CounterRng& rng, double sd = 1.0) {
  Tensor<double> t(std::move(shape));
  for (double& v : t.data) v = rng.normal(0.0, sd);
  return t;
}

// P V with P computed row by row from the given mapping oracle.
std::vector<double> reference_attention(const Tensor<double>& q, const Tensor<double>& k,
                                        const Tensor<double>& v,
                                        std::vector<double> (*map)(const std::vector<double>&),
                                        std::vector<std::vector<double>>* probs = nullptr) {
  const std::size_t n = q.rows(), d = q.cols();
  std::vector<double> out(n * v.cols(), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> s(n);
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t c = 0; c < d; ++c) acc += q.at(i, c) * k.at(j, c);
      s[j] = acc / std::sqrt(static_cast<double>(d));
    }
    const auto p = map(s);
    if (probs) probs->push_back(p);
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t c = 0; c < v.cols(); ++c) out[i * v.cols() + c] += p[j] * v.at(j, c);
  }
  return out;
}

std::vector<double> sparsemax_oracle(const std::vector<double>& z) {
  return oracle::simplex_projection(z);
}

std::vector<double> entmax15_oracle(const std::vector<double>& z) {
  return oracle::entmax_by_bisection(z, 1.5);
}

}  // namespace

TEST_CASE("scaled dot attention worked example") {
  // Q = K = I, so scores are I / sqrt(2).
  Tensor<double> q({2, 2}, {1, 0, 0, 1});
  Tensor<double> v({2, 2}, {1, 2, 3, 4});
  auto soft = scaled_dot_attention(q, q, v, {}, simplex::MappingKind::softmax());
  const double a = std::exp(1 / std::sqrt(2.0)) / (std::exp(1 / std::sqrt(2.0)) + 1.0);
  CHECK(soft.record.at(0, 0) == doctest::Approx(a).epsilon(1e-12));
  CHECK(soft.record.at(0, 1) == doctest::Approx(1 - a).epsilon(1e-12));
  CHECK(soft.output.at(0, 0) == doctest::Approx(a * 1 + (1 - a) * 3).epsilon(1e-12));

  // sparsemax([0.7071, 0]) keeps both entries: 0.5 + 0.7071/2 and the rest.
  auto sparse = scaled_dot_attention(q, q, v, {}, simplex::MappingKind::sparsemax());
  const double b = 0.5 + 0.5 / std::sqrt(2.0);
  CHECK(sparse.record.at(0, 0) == doctest::Approx(b).epsilon(1e-12));
  CHECK(sparse.record.at(1, 1) == doctest::Approx(b).epsilon(1e-12));

  // Large scores push sparsemax to a one-hot row.
  Tensor<double> big({2, 2}, {4, 0, 0, 4});
  auto onehot = scaled_dot_attention(big, big, v, {}, simplex::MappingKind::sparsemax());
  CHECK(onehot.record.at(0, 0) == 1.0);
  CHECK(onehot.record.at(0, 1) == 0.0);
  CHECK(onehot.output.at(1, 0) == 3.0);
}

TEST_CASE("attention matches a row-by-row reference") {
  CounterRng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 2 + rng.below(6);
    auto q3 = random_tensor({n, 3}, rng, 2.0), k3 = random_tensor({n, 3}, rng, 2.0);
    auto v = random_tensor({n, 3}, rng);
    auto sm = scaled_dot_attention(q3, k3, v, {}, simplex::MappingKind::sparsemax());
    auto em = scaled_dot_attention(q3, k3, v, {}, simplex::MappingKind::entmax15());
    const auto ref_sm = reference_attention(q3, k3, v, sparsemax_oracle);
    const auto ref_em = reference_attention(q3, k3, v, entmax15_oracle);
    for (std::size_t i = 0; i < ref_sm.size(); ++i) {
      CHECK(std::abs(sm.output.data[i] - ref_sm[i]) <= 1e-9);
      CHECK(std::abs(em.output.data[i] - ref_em[i]) <= 1e-7);
    }
    CHECK(record_is_valid(sm.record));
    CHECK(record_is_valid(em.record));
  }
}

TEST_CASE("masked keys get exactly zero weight") {
  CounterRng rng(3);
  auto q = random_tensor({4, 2}, rng), k = random_tensor({4, 2}, rng), v = random_tensor({4, 2}, rng);
  for (auto kind : {simplex::MappingKind::softmax(), simplex::MappingKind::sparsemax(),
                    simplex::MappingKind::entmax15(), simplex::MappingKind::entmax(1.3)}) {
    auto r = scaled_dot_attention(q, k, v, {true, false, true, false}, kind);
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(r.record.at(i, 1) == 0.0);
      CHECK(r.record.at(i, 3) == 0.0);
    }
    CHECK(record_is_valid(r.record));
  }
  try {
    scaled_dot_attention(q, k, v, {false, false, false, false}, simplex::MappingKind::softmax());
    FAIL("expected an empty-pool error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kEmpty);
  }
}

TEST_CASE("segments do not interact") {
  CounterRng rng(8);
  auto base = random_tensor({7, 4}, rng);
  const std::vector<AttentionSegment> segs{{0, 3, {}}, {3, 4, {true, true, true, false}}};
  auto run = [&](const Tensor<double>& x, std::vector<AttentionRecord>* rec) {
    Tape<double> tape(false);
    auto v = tape.constant(x);
    return attention_core(v, v, v, segs, 2, simplex::MappingKind::sparsemax(), rec).value_tensor();
  };
  std::vector<AttentionRecord> records;
  const auto out = run(base, &records);
  REQUIRE(records.size() == 4);
  CHECK(records[0].size == 3);
  CHECK(records[1].head == 1);
  CHECK(records[2].size == 4);
  CHECK(records[3].key_mask == std::vector<bool>{true, true, true, false});

  auto changed = base;
  for (std::size_t c = 0; c < 4; ++c) changed.at(5, c) += 10.0;
  const auto out2 = run(changed, nullptr);
  for (std::size_t i = 0; i < 3 * 4; ++i) CHECK(out.data[i] == out2.data[i]);

  // The masked row still attends, but its key never receives weight, so
  // changing it moves only its own output row.
  auto masked = base;
  for (std::size_t c = 0; c < 4; ++c) masked.at(6, c) += 10.0;
  const auto out3 = run(masked, nullptr);
  for (std::size_t i = 0; i < 6 * 4; ++i) CHECK(out.data[i] == out3.data[i]);
}

TEST_CASE("heads attend over disjoint column blocks") {
  CounterRng rng(44);
  auto x = random_tensor({5, 4}, rng, 1.5);
  Tape<double> tape(false);
  auto xv = tape.constant(x);
  const auto out = attention_core(xv, xv, xv, {{0, 5, {}}}, 2, simplex::MappingKind::entmax15(),
                                  nullptr)
                       .value_tensor();
  for (std::size_t h = 0; h < 2; ++h) {
    Tensor<double> slice({5, 2});
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t c = 0; c < 2; ++c) slice.at(i, c) = x.at(i, 2 * h + c);
    const auto ref = reference_attention(slice, slice, slice, entmax15_oracle);
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t c = 0; c < 2; ++c)
        CHECK(std::abs(out.at(i, 2 * h + c) - ref[i * 2 + c]) <= 1e-7);
  }
  try {
    attention_core(xv, xv, xv, {{0, 5, {}}}, 3, simplex::MappingKind::softmax(), nullptr);
    FAIL("expected a config error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kConfig);
  }
}

TEST_CASE("positional embeddings") {
  Tape<double> tape;
  auto x = tape.input(Tensor<double>({2, 2}, {1, 1, 1, 1}));
  auto table = tape.input(Tensor<double>({3, 2}, {0, 1, 2, 3, 4, 5}));
  CHECK(add_positional_embeddings(x, table).value_tensor().data == std::vector<double>{1, 2, 3, 4});
  const std::vector<std::size_t> pos{2, 0};
  CHECK(add_positional_embeddings(x, table, std::span<const std::size_t>(pos)).value_tensor().data ==
        std::vector<double>{5, 6, 1, 2});
  auto long_x = tape.input(Tensor<double>({4, 2}));
  try {
    add_positional_embeddings(long_x, table);
    FAIL("expected a capacity error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kCapacity);
  }
}

TEST_CASE("encoder layer gradients match finite differences") {
  for (auto kind : {simplex::MappingKind::softmax(), simplex::MappingKind::sparsemax(),
                    simplex::MappingKind::entmax15(), simplex::MappingKind::entmax(1.7)}) {
    CAPTURE(kind.to_string());
    AttentionConfig cfg;
    cfg.model_dim = 4;
    cfg.heads = 2;
    cfg.mapping = kind;
    cfg.dropout_rate = 0.0;
    const std::vector<AttentionSegment> segs{{0, 3, {}}, {3, 2, {}}};
    bool checked = false;
    for (std::uint64_t attempt = 0; attempt < 50 && !checked; ++attempt) {
      CounterRng rng(100 + attempt);
      nn::ParameterSet<double> params;
      add_encoder_layer_params(params, "enc", 4, rng);
      for (std::size_t i = 0; i < params.size(); ++i)
        if (params[i].value.rank() == 1)
          for (double& v : params[i].value.data) v += rng.normal(0.0, 0.3);
      const auto x = random_tensor({5, 4}, rng, 1.5);
      const auto w = random_tensor({4, 3}, rng);
      auto f = [&](Tape<double>& tape) {
        CounterRng unused(0);
        auto y = transformer_encoder_layer(tape.constant(x), segs, cfg, params, "enc", false,
                                           unused, nullptr);
        return nn::sum(nn::linear(y, tape.constant(w)));
      };
      Tape<double> probe(false);
      f(probe);
      if (probe.min_margin() < 1e-3) continue;
      const auto rep = nn::grad_check_params(f, params);
      CHECK(rep.passed);
      CHECK(rep.max_rel_error <= 1e-4);
      checked = true;
    }
    CHECK(checked);
  }
}
