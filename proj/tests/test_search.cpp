#include <doctest.h>

#include <cmath>

#include "bitshapley/errors.hpp"
#include "bitshapley/rng.hpp"
#include "bitshapley/search.hpp"
#include "test_util.hpp"

using namespace bitshapley;
using bshp_test::rel_err;

namespace {

ComputeGraph two_layer(std::uint64_t seed, std::size_t hidden = 8) {
  std::vector<LayerSpec> specs{DenseSpec{2, hidden}, ReluSpec{},
                               DenseSpec{hidden, 2}};
  return ComputeGraph::build(specs, {2}, seed);
}

SearchSpace small_space() {
  SearchSpace s;
  s.weight_bits = {BitWidth(2), BitWidth(4), BitWidth(8)};
  s.act_bits = {BitWidth(4)};
  return s;
}

SearchConfig base_config(SearchMethod method, std::uint64_t seed) {
  SearchConfig cfg;
  cfg.method = method;
  cfg.epochs = 4;
  cfg.mc_samples = 8;
  cfg.seed = seed;
  cfg.train.seed = seed;
  cfg.train.batch_size = 32;
  cfg.train.learning_rate = 0.1;
  cfg.epsilon = 1e-9;  // effectively never fires at this scale
  return cfg;
}

}  // namespace

TEST_CASE("train_weights_epoch learns a separable task") {
  const Dataset data = gen_synthetic(SyntheticKind::gaussians, 400, 0.03, 11);
  const auto [train_data, val_data] = split(data, 0.25, 1);
  Supernet sn(two_layer(5), small_space());
  sn.calibrate(train_data.inputs, 32, 4);

  TrainConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.batch_size = 32;
  cfg.seed = 3;
  Optimizer opt(Optim::sgd, cfg.learning_rate);
  double loss = 0.0;
  for (std::uint64_t e = 0; e < 20; ++e) {
    loss = train_weights_epoch(sn, train_data, cfg, opt, e);
  }
  CHECK(std::isfinite(loss));
  const std::vector<SlotPair> slots = sn.mixture_slots();
  const double acc = accuracy(sn.graph(), train_data.inputs, train_data.labels,
                              64, &slots);
  CHECK(acc > 0.95);
}

TEST_CASE("zero learning rate leaves weights unchanged") {
  const Dataset data = gen_synthetic(SyntheticKind::moons, 128, 0.05, 2);
  Supernet sn(two_layer(7), small_space());
  sn.calibrate(data.inputs, 32, 2);
  const std::uint64_t before = sn.graph().weight_digest();
  TrainConfig cfg;
  cfg.learning_rate = 1e-300;  // zero step within double rounding
  cfg.batch_size = 32;
  Optimizer opt(Optim::sgd, 0.0);
  train_weights_epoch(sn, data, cfg, opt, 0);
  CHECK(sn.graph().weight_digest() == before);
}

TEST_CASE("identical seeds give identical loss trajectories") {
  const auto run = [](std::uint64_t seed) {
    const Dataset data = gen_synthetic(SyntheticKind::moons, 256, 0.08, 21);
    const auto [train_data, val_data] = split(data, 0.25, 2);
    Supernet sn(two_layer(9), small_space());
    SearchConfig cfg = base_config(SearchMethod::smpq, seed);
    cfg.epochs = 3;
    const SearchResult r = smpq_search(sn, train_data, val_data, cfg);
    std::vector<double> losses;
    for (const auto& rec : r.trajectory.records) {
      losses.push_back(rec.train_loss);
    }
    return losses;
  };
  CHECK(run(5) == run(5));
  CHECK(run(5) != run(6));
}

TEST_CASE("smpq search records trajectory and emits a valid policy") {
  const Dataset data = gen_synthetic(SyntheticKind::moons, 256, 0.08, 31);
  const auto [train_data, val_data] = split(data, 0.25, 3);
  Supernet sn(two_layer(13), small_space());
  SearchConfig cfg = base_config(SearchMethod::smpq, 9);
  const SearchResult r = smpq_search(sn, train_data, val_data, cfg);

  CHECK(r.trajectory.records.size() == cfg.epochs);
  CHECK(r.shapley_rounds.size() == cfg.epochs);
  for (const auto& rec : r.trajectory.records) {
    CHECK(std::isfinite(rec.delta_psi));
    CHECK(rec.val_accuracy >= 0.0);
  }
  // policy bits always come from the candidate sets
  for (const QuantPolicy::Entry& e : r.policy.policy.entries) {
    bool w_ok = false, a_ok = false;
    for (const BitWidth b : small_space().weight_bits) {
      if (b == e.weight_bit) w_ok = true;
    }
    for (const BitWidth b : small_space().act_bits) {
      if (b == e.act_bit) a_ok = true;
    }
    CHECK(w_ok);
    CHECK(a_ok);
  }
}

TEST_CASE("infinite epsilon stops smpq after the first round") {
  const Dataset data = gen_synthetic(SyntheticKind::moons, 200, 0.08, 41);
  const auto [train_data, val_data] = split(data, 0.25, 4);
  Supernet sn(two_layer(15), small_space());
  SearchConfig cfg = base_config(SearchMethod::smpq, 10);
  cfg.epsilon = std::numeric_limits<double>::infinity();
  const SearchResult r = smpq_search(sn, train_data, val_data, cfg);
  CHECK(r.trajectory.converged);
  CHECK(r.trajectory.records.size() == 1);
  CHECK(r.trajectory.records.back().delta_psi < cfg.epsilon);
}

TEST_CASE("single-candidate space forces the policy regardless of psi") {
  SearchSpace s;
  s.weight_bits = {BitWidth(3)};
  s.act_bits = {BitWidth(5)};
  const Dataset data = gen_synthetic(SyntheticKind::gaussians, 200, 0.05, 51);
  const auto [train_data, val_data] = split(data, 0.25, 5);
  Supernet sn(two_layer(17), s);
  SearchConfig cfg = base_config(SearchMethod::smpq, 11);
  cfg.epochs = 2;
  const SearchResult r = smpq_search(sn, train_data, val_data, cfg);
  for (const QuantPolicy::Entry& e : r.policy.policy.entries) {
    CHECK(e.weight_bit.bits() == 3);
    CHECK(e.act_bit.bits() == 5);
  }
}

TEST_CASE("planted noise branch ends with the lowest alpha on its edge") {
  const Dataset data = gen_synthetic(SyntheticKind::moons, 800, 0.06,
                                     derive_seed(61, "data"));
  const auto [train_data, val_data] =
      split(data, 0.25, derive_seed(61, "split"));
  SearchSpace space;
  space.weight_bits = {BitWidth(2), BitWidth(4), BitWidth(8)};
  // benign mid/high activation bits, so the planted branch is the only
  // damaging candidate on its edge
  space.act_bits = {BitWidth(4), BitWidth(6), BitWidth(8)};
  Supernet sn(two_layer(derive_seed(61, "network.init")), space);
  // candidate 1 of the layer-0 activation edge emits an input-independent
  // pattern: its coalitions lose the signal entirely
  sn.plant_noise_branch(0, EdgeKind::act, 1, derive_seed(61, "noise"));

  SearchConfig cfg = base_config(SearchMethod::smpq, 61);
  cfg.epochs = 10;
  cfg.mc_samples = 10;
  smpq_search(sn, train_data, val_data, cfg);

  const MixedEdge& e = sn.edge(0, EdgeKind::act);
  CHECK(e.alpha[1] < e.alpha[0]);
  CHECK(e.alpha[1] < e.alpha[2]);
  CHECK_FALSE(sn.policy_uses_noise(sn.discretize()));
}

TEST_CASE("dmpq alpha gradients match finite differences through the mixture") {
  // The probed layer is the network head, so its alpha path stays smooth:
  // no downstream quantizer grids sit between the mixture and the loss.
  const Dataset data = gen_synthetic(SyntheticKind::gaussians, 64, 0.1, 71);
  std::vector<LayerSpec> specs{DenseSpec{2, 6}, ReluSpec{}, DenseSpec{6, 2}};
  auto graph = ComputeGraph::build(specs, {2}, 23);
  SearchSpace space;
  space.weight_bits = {BitWidth(2), BitWidth(4), BitWidth(8)};
  space.act_bits = {BitWidth(3), BitWidth(6)};
  Supernet sn(std::move(graph), space);
  sn.calibrate(data.inputs, 32, 2);
  // off-uniform alphas so the softmax jacobian is exercised
  std::vector<double> alpha = sn.alpha_flat();
  Rng arng(3);
  for (double& a : alpha) a = arng.uniform(-0.5, 0.5);
  sn.set_alpha_flat(alpha);

  const Tensor batch = data.batch(0, 64);
  std::vector<int> labels(data.labels.begin(), data.labels.begin() + 64);
  std::vector<double> grad;
  mixture_loss_alpha_grad(sn, batch, labels, &grad);

  // finite differences on the head layer's two edges (players of layer 1)
  const auto loss_at = [&](const std::vector<double>& a) {
    Supernet probe = sn;
    probe.set_alpha_flat(a);
    const Tensor logits = probe.mixture_eval(batch);
    return ComputeGraph::cross_entropy(logits, labels);
  };
  const auto& players = sn.players();
  const double h = 1e-5;
  for (std::size_t i = 0; i < players.size(); ++i) {
    if (players[i].layer != 1) continue;
    std::vector<double> up = alpha, down = alpha;
    up[i] += h;
    down[i] -= h;
    const double fd = (loss_at(up) - loss_at(down)) / (2.0 * h);
    if (std::abs(fd) < 1e-9 && std::abs(grad[i]) < 1e-9) continue;
    CHECK(rel_err(grad[i], fd) < 1e-4);
  }
}

TEST_CASE("indistinguishable branches get equal alpha gradients; exact ties "
          "resolve to the lower bit") {
  // Candidate sets are duplicate-free, so branches can only be identical in
  // effect: 31 vs 32 bits differ by ~1e-9 relative.  Their alpha gradients
  // must agree to that tolerance, and an exact alpha tie must discretize to
  // the lower bit.
  SearchSpace space;
  space.weight_bits = {BitWidth(31), BitWidth(32)};
  space.act_bits = {BitWidth(32)};
  const Dataset data = gen_synthetic(SyntheticKind::gaussians, 128, 0.1, 81);
  Supernet sn(two_layer(29), space);
  sn.calibrate(data.inputs, 32, 2);

  const Tensor batch = data.batch(0, 64);
  const std::vector<int> labels(data.labels.begin(), data.labels.begin() + 64);
  std::vector<double> grad;
  mixture_loss_alpha_grad(sn, batch, labels, &grad);
  const auto& players = sn.players();
  for (int layer = 0; layer < sn.n_layers(); ++layer) {
    double g31 = 0, g32 = 0;
    for (std::size_t i = 0; i < players.size(); ++i) {
      if (players[i].layer != layer || players[i].kind != EdgeKind::weight) {
        continue;
      }
      (players[i].bit.bits() == 31 ? g31 : g32) = grad[i];
    }
    CHECK(std::abs(g31 - g32) < 1e-7);
  }

  // alpha untouched (exact tie) selects the lower bit everywhere
  for (const QuantPolicy::Entry& e : sn.discretize().entries) {
    CHECK(e.weight_bit.bits() == 31);
  }
}

TEST_CASE("zero alpha learning rate leaves the policy to the tie rule") {
  const Dataset data = gen_synthetic(SyntheticKind::moons, 200, 0.08, 91);
  const auto [train_data, val_data] = split(data, 0.25, 8);
  Supernet sn(two_layer(31), small_space());
  SearchConfig cfg = base_config(SearchMethod::dmpq, 17);
  cfg.alpha_lr = 0.0;
  cfg.epochs = 2;
  const SearchResult r = dmpq_search(sn, train_data, val_data, cfg);
  for (const QuantPolicy::Entry& e : r.policy.policy.entries) {
    CHECK(e.weight_bit == small_space().weight_bits.front());
    CHECK(e.act_bit == small_space().act_bits.front());
  }
}

TEST_CASE("dmpq on-val alpha stepping runs and stays finite") {
  const Dataset data = gen_synthetic(SyntheticKind::moons, 200, 0.08, 95);
  const auto [train_data, val_data] = split(data, 0.25, 9);
  Supernet sn(two_layer(37), small_space());
  SearchConfig cfg = base_config(SearchMethod::dmpq, 19);
  cfg.alpha_on_val = true;
  cfg.epochs = 2;
  const SearchResult r = dmpq_search(sn, train_data, val_data, cfg);
  for (const double a : sn.alpha_flat()) CHECK(std::isfinite(a));
  CHECK(r.trajectory.records.size() == 2);
}

TEST_CASE("finetune with zero epochs reports the inherited weights exactly") {
  const Dataset data = gen_synthetic(SyntheticKind::gaussians, 200, 0.05, 99);
  const auto [train_data, val_data] = split(data, 0.25, 10);
  Supernet sn(two_layer(41), small_space());
  sn.calibrate(train_data.inputs, 32, 4);
  QuantPolicy policy;
  policy.entries = {{0, BitWidth(8), BitWidth(4)}, {1, BitWidth(8), BitWidth(4)}};
  const CostBudget budget = CostBudget::from_graph(sn.graph());

  TrainConfig cfg;
  cfg.epochs = 0;
  const FinetuneMetrics m =
      finetune(sn, policy, train_data, val_data, cfg, budget);

  const ComputeGraph pinned = apply_policy(sn, policy);
  CHECK(m.val_accuracy ==
        accuracy(pinned, val_data.inputs, val_data.labels));
  CHECK(m.train_loss == 0.0);
}

TEST_CASE("finetuning an all-32 policy does not hurt inherited accuracy") {
  // seed-averaged comparison: tuned accuracy must match or beat the raw
  // inherited weights on average
  SearchSpace space;
  space.weight_bits = {BitWidth(4), BitWidth(32)};
  space.act_bits = {BitWidth(32)};
  double gain = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Dataset data =
        gen_synthetic(SyntheticKind::moons, 300, 0.08, 100 + seed);
    const auto [train_data, val_data] = split(data, 0.25, seed);
    Supernet sn(two_layer(200 + seed), space);
    sn.calibrate(train_data.inputs, 32, 4);
    // give the shared weights a brief warmup so "inherited" is meaningful
    TrainConfig warm;
    warm.epochs = 2;
    warm.learning_rate = 0.1;
    warm.seed = seed;
    Optimizer opt(Optim::sgd, warm.learning_rate);
    for (std::uint64_t e = 0; e < warm.epochs; ++e) {
      train_weights_epoch(sn, train_data, warm, opt, e);
    }

    QuantPolicy policy;
    policy.entries = {{0, BitWidth(32), BitWidth(32)},
                      {1, BitWidth(32), BitWidth(32)}};
    const CostBudget budget = CostBudget::from_graph(sn.graph());
    TrainConfig zero = warm;
    zero.epochs = 0;
    TrainConfig tune = warm;
    tune.epochs = 10;
    const double raw =
        finetune(sn, policy, train_data, val_data, zero, budget).val_accuracy;
    const double tuned =
        finetune(sn, policy, train_data, val_data, tune, budget).val_accuracy;
    gain += tuned - raw;
  }
  CHECK(gain / 5.0 >= -0.01);  // within seed noise
}

TEST_CASE("search rejects mismatched methods and bad configs") {
  const Dataset data = gen_synthetic(SyntheticKind::moons, 64, 0.1, 7);
  const auto [train_data, val_data] = split(data, 0.25, 11);
  Supernet sn(two_layer(43), small_space());
  SearchConfig cfg = base_config(SearchMethod::dmpq, 21);
  CHECK_THROWS_AS(smpq_search(sn, train_data, val_data, cfg), ConfigError);
  cfg.method = SearchMethod::smpq;
  cfg.mc_samples = 0;
  CHECK_THROWS_AS(smpq_search(sn, train_data, val_data, cfg), ConfigError);
}
