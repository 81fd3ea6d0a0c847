#include <gtest/gtest.h>

#include <filesystem>
#include <numbers>

#include "oracles.hpp"
#include "psw/agents.hpp"

using namespace psw;

namespace {

Td3nConfig small_td3(int n = 4) {
  Td3nConfig c;
  c.hidden = {16, 16};
  c.n_critics = n;
  c.batch_size = 32;
  return c;
}

BcConfig small_bc() {
  BcConfig c;
  c.hidden = {16, 16};
  c.batch_size = 32;
  return c;
}

Batch sample_batch(std::size_t n, std::uint64_t seed, Tier tier = Tier::Medium) {
  static const auto buf = buffer_from_dataset(generate_dataset(kDenseEnvId, tier, 2000, 1));
  Rng rng = make_rng(seed);
  return buf.sample(n, rng);
}

double max_abs_diff(const MlpParams& a, const MlpParams& b) {
  double m = 0.0;
  for (std::size_t k = 0; k < a.layers.size(); ++k) {
    m = std::max(m, (a.layers[k].weight - b.layers[k].weight).cwiseAbs().maxCoeff());
    m = std::max(m, (a.layers[k].bias - b.layers[k].bias).cwiseAbs().maxCoeff());
  }
  return m;
}

// Straight-line TD target for one column, using only the oracle forward pass.
double oracle_target(const Td3nAgent& ag, const Batch& b, Eigen::Index j, const std::vector<int>& idx,
                     const Eigen::MatrixXd& noise) {
  std::vector<double> s2(b.next_states.col(j).data(), b.next_states.col(j).data() + b.next_states.rows());
  auto a2 = oracle::forward(ag.actor_target(), s2);
  const double bound = ag.action_bound();
  for (std::size_t d = 0; d < a2.size(); ++d)
    a2[d] = std::clamp(bound * a2[d] + noise(static_cast<Eigen::Index>(d), j), -bound, bound);
  std::vector<double> x = s2;
  x.insert(x.end(), a2.begin(), a2.end());
  double q_min = std::numeric_limits<double>::infinity();
  for (int i : idx) q_min = std::min(q_min, oracle::forward(ag.critics().target[static_cast<std::size_t>(i)], x)[0]);
  return b.rewards(j) + ag.config().gamma * (1.0 - b.dones(j)) * q_min;
}

}  // namespace

// ---------------------------------------------------------------------------
// Gaussian behavioural cloning

TEST(GaussianBc, NllClosedFormAtExactMean) {
  GaussianPolicy bc(4, 2, 1.0, small_bc(), 1);
  auto& last = bc.mutable_trunk().layers.back();
  last.weight.setZero();
  last.bias << 0.3, -0.6, 0.0, 0.0;  // mean (0.3, -0.6), log_std 0
  Batch b = sample_batch(8, 1);
  b.actions.row(0).setConstant(0.3);
  b.actions.row(1).setConstant(-0.6);
  const double per_dim = 0.5 * std::log(2.0 * std::numbers::pi);
  EXPECT_NEAR(per_dim, 0.9189385, 1e-7);
  EXPECT_NEAR(bc.nll(b) / 2.0, per_dim, 1e-12);
  EXPECT_NEAR(bc.train_step(b) / 2.0, per_dim, 1e-12);
}

TEST(GaussianBc, OverfitsSinglePair) {
  GaussianPolicy bc(4, 2, 1.0, small_bc(), 2);
  Transition t;
  t.state = {0.2, -0.1, 0.05, 0.3};
  t.action = {0.7, -0.4};
  t.next_state = t.state;
  const std::vector<Transition> ts(16, t);
  const Batch b = make_batch(ts);
  for (int i = 0; i < 2000; ++i) bc.train_step(b);
  const auto a = bc.act(t.state, ActMode::Eval);
  EXPECT_LT(std::hypot(a[0] - 0.7, a[1] + 0.4), 1e-2);
}

TEST(GaussianBc, LossIsPermutationInvariant) {
  const GaussianPolicy bc(4, 2, 1.0, small_bc(), 3);
  const Batch b = sample_batch(64, 3);
  Batch p = b;
  for (Eigen::Index j = 0; j < b.size(); ++j) {
    const Eigen::Index k = b.size() - 1 - j;
    p.states.col(j) = b.states.col(k);
    p.actions.col(j) = b.actions.col(k);
  }
  EXPECT_NEAR(bc.nll(b), bc.nll(p), 1e-12);
}

TEST(GaussianBc, ActionsDeterministicBoundedAndConvergeAsStdVanishes) {
  BcConfig cfg = small_bc();
  cfg.log_std_min = -40.0;
  GaussianPolicy bc(4, 2, 1.0, cfg, 4);
  const std::vector<double> s{0.5, 0.5, 0.0, 0.0};
  EXPECT_EQ(bc.act(s, ActMode::Eval), bc.act(s, ActMode::Eval));
  auto& last = bc.mutable_trunk().layers.back();
  last.weight.bottomRows(2).setZero();
  last.bias.tail(2).setConstant(-40.0);
  Rng rng = make_rng(1);
  const auto eval = bc.act(s, ActMode::Eval);
  const auto sampled = bc.act(s, ActMode::Explore, &rng);
  for (int i = 0; i < 2; ++i) EXPECT_NEAR(sampled[i], eval[i], 1e-12);

  last.bias.tail(2).setConstant(2.0);  // std e^2: most raw samples leave the box
  for (int k = 0; k < 200; ++k)
    for (double x : bc.act(s, ActMode::Explore, &rng)) EXPECT_LE(std::fabs(x), 1.0);
}

TEST(GaussianBc, LogStdIsClamped) {
  GaussianPolicy bc(4, 2, 1.0, small_bc(), 5);
  auto& last = bc.mutable_trunk().layers.back();
  last.weight *= 100.0;
  const Batch b = sample_batch(128, 5);
  const auto d = bc.distribution(b.states * 50.0);
  EXPECT_GE(d.log_std.minCoeff(), -5.0);
  EXPECT_LE(d.log_std.maxCoeff(), 2.0);
  EXPECT_GT(d.log_std.cwiseEqual(2.0).count() + d.log_std.cwiseEqual(-5.0).count(), 0);
}

TEST(GaussianBc, NonFiniteLossRejected) {
  GaussianPolicy bc(4, 2, 1.0, small_bc(), 6);
  Batch b = sample_batch(8, 6);
  b.actions(0, 0) = std::numeric_limits<double>::quiet_NaN();
  const auto before = bc.trunk();
  EXPECT_THROW(bc.train_step(b), NumericError);
  EXPECT_EQ(bc.trunk(), before);
}

// ---------------------------------------------------------------------------
// TD3-N

TEST(Td3n, MyopicTargetIsReward) {
  auto cfg = small_td3();
  cfg.gamma = 0.0;
  Td3nAgent ag(4, 2, 1.0, cfg, 1);
  const Batch b = sample_batch(32, 1);
  Rng rng = make_rng(2);
  const auto idx = ag.draw_target_indices(TargetMode::MinAll, rng);
  const auto y = ag.td_targets(b, idx, ag.draw_target_noise(b.size(), rng));
  for (Eigen::Index j = 0; j < b.size(); ++j) EXPECT_EQ(y(j), b.rewards(j));
}

TEST(Td3n, IdenticalCriticsMakeTargetModesAgree) {
  Td3nAgent ag(4, 2, 1.0, small_td3(5), 2);
  auto& c = ag.mutable_critics();
  for (auto& t : c.target) t = c.target.front();
  const Batch b = sample_batch(32, 2);
  Rng rng = make_rng(3);
  const auto noise = ag.draw_target_noise(b.size(), rng);
  const auto all = ag.draw_target_indices(TargetMode::MinAll, rng);
  const auto pair = ag.draw_target_indices(TargetMode::MinRandom2, rng);
  EXPECT_EQ((ag.td_targets(b, all, noise) - ag.td_targets(b, pair, noise)).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Td3n, TargetsMatchStraightLineOracle) {
  Td3nAgent ag(4, 2, 1.0, small_td3(4), 3);
  Batch b = sample_batch(24, 3);
  b.dones(3) = 1.0;
  Rng rng = make_rng(4);
  const auto noise = ag.draw_target_noise(b.size(), rng);
  for (auto mode : {TargetMode::MinAll, TargetMode::MinRandom2}) {
    const auto idx = ag.draw_target_indices(mode, rng);
    const auto y = ag.td_targets(b, idx, noise);
    for (Eigen::Index j = 0; j < b.size(); ++j) EXPECT_NEAR(y(j), oracle_target(ag, b, j, idx, noise), 1e-12);
  }
}

TEST(Td3n, MinAllIsMostPessimistic) {
  Rng rng = make_rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    Td3nAgent ag(4, 2, 1.0, small_td3(6), static_cast<std::uint64_t>(trial));
    const Batch b = sample_batch(32, static_cast<std::uint64_t>(100 + trial));
    const auto noise = ag.draw_target_noise(b.size(), rng);
    const auto all = ag.draw_target_indices(TargetMode::MinAll, rng);
    const auto y_all = ag.td_targets(b, all, noise);
    for (int i = 0; i < 6; ++i) {
      const std::vector<int> one{i};
      EXPECT_TRUE((y_all.array() <= ag.td_targets(b, one, noise).array()).all());
    }
  }
}

TEST(Td3n, RandomPairsAreDistinctAndCoverEnsemble) {
  const Td3nAgent ag(4, 2, 1.0, small_td3(5), 6);
  Rng rng = make_rng(7);
  std::vector<int> seen(5, 0);
  for (int k = 0; k < 500; ++k) {
    const auto idx = ag.draw_target_indices(TargetMode::MinRandom2, rng);
    ASSERT_EQ(idx.size(), 2u);
    EXPECT_NE(idx[0], idx[1]);
    for (int i : idx) {
      ASSERT_GE(i, 0);
      ASSERT_LT(i, 5);
      ++seen[static_cast<std::size_t>(i)];
    }
  }
  for (int c : seen) EXPECT_GT(c, 100);
}

TEST(Td3n, FullIndexSetEqualsOfflineUpdate) {
  Td3nAgent a(4, 2, 1.0, small_td3(4), 8);
  Td3nAgent b = a;
  const Batch batch = sample_batch(32, 8);
  Rng ra = make_rng(9);
  Rng rb = make_rng(9);
  a.critic_update(batch, TargetMode::MinAll, ra);
  // Same stream: MinAll draws no indices, so the noise matches.
  const auto noise = b.draw_target_noise(batch.size(), rb);
  const std::vector<int> all{0, 1, 2, 3};
  b.critic_update_with(batch, all, noise);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(a.critics().online[i], b.critics().online[i]);
    EXPECT_EQ(a.critics().target[i], b.critics().target[i]);
  }
}

TEST(Td3n, NonFiniteTargetRejected) {
  Td3nAgent ag(4, 2, 1.0, small_td3(), 9);
  Batch b = sample_batch(16, 9);
  b.rewards(2) = std::numeric_limits<double>::infinity();
  const auto before = ag.critics().online;
  Rng rng = make_rng(1);
  EXPECT_THROW(ag.critic_update(b, TargetMode::MinAll, rng), NumericError);
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(ag.critics().online[i], before[i]);
}

TEST(Td3n, TargetCriticsTrackOnlineBySoftUpdate) {
  Td3nAgent ag(4, 2, 1.0, small_td3(3), 10);
  Rng rng = make_rng(11);
  const double tau = ag.config().tau;
  for (int step = 0; step < 20; ++step) {
    const auto online_before = ag.critics().online;
    const auto target_before = ag.critics().target;
    ag.critic_update(sample_batch(32, static_cast<std::uint64_t>(step)), TargetMode::MinAll, rng);
    for (std::size_t i = 0; i < 3; ++i) {
      const auto& on = ag.critics().online[i];
      const auto& tg = ag.critics().target[i];
      for (std::size_t k = 0; k < on.layers.size(); ++k) {
        const Eigen::MatrixXd expect =
            (1.0 - tau) * target_before[i].layers[k].weight + tau * on.layers[k].weight;
        EXPECT_TRUE(tg.layers[k].weight.isApprox(expect, 1e-14));
      }
      const double moved = max_abs_diff(tg, target_before[i]);
      const double bound = tau * (max_abs_diff(target_before[i], online_before[i]) + max_abs_diff(on, online_before[i]));
      EXPECT_LE(moved, bound + 1e-15);
      EXPECT_LE(max_abs_diff(tg, on),
                (1.0 - tau) * (max_abs_diff(target_before[i], online_before[i]) + max_abs_diff(on, online_before[i])) +
                    1e-15);
    }
  }
}

TEST(Td3n, ConstantCriticsGiveZeroActorGradient) {
  Td3nAgent ag(4, 2, 1.0, small_td3(3), 12);
  for (auto& c : ag.mutable_critics().online) {
    c.layers.back().weight.setZero();
    c.layers.back().bias.setConstant(-1.25);
  }
  const auto actor_before = ag.actor();
  const double loss = ag.actor_update(sample_batch(32, 12));
  EXPECT_EQ(ag.actor(), actor_before);
  EXPECT_DOUBLE_EQ(loss, 1.25);
}

TEST(Td3n, ActorLossIsNegativeMeanEnsembleValue) {
  Td3nAgent ag(4, 2, 1.0, small_td3(4), 13);
  const Batch b = sample_batch(32, 13);
  const Eigen::MatrixXd q = ag.critics().values(b.states, ag.policy(b.states));
  EXPECT_NEAR(ag.actor_update(b), -q.mean(), 1e-12);
}

TEST(Td3n, ActorDescendsL1Bowl) {
  // Q(s, a) = -|a|_1 built from relu units; the actor should push a to 0.
  auto cfg = small_td3(2);
  cfg.hidden = {4, 4};
  cfg.actor_lr = 1e-3;
  Td3nAgent ag(4, 2, 1.0, cfg, 14);
  for (auto& c : ag.mutable_critics().online) {
    c.layers[0].weight.setZero();
    c.layers[0].bias.setZero();
    c.layers[0].weight(0, 4) = 1.0;
    c.layers[0].weight(1, 4) = -1.0;
    c.layers[0].weight(2, 5) = 1.0;
    c.layers[0].weight(3, 5) = -1.0;
    c.layers[1].weight.setIdentity();
    c.layers[1].bias.setZero();
    c.layers[2].weight.setConstant(-1.0);
    c.layers[2].bias.setZero();
  }
  const Batch b = sample_batch(64, 14);
  auto mean_abs = [&] { return ag.policy(b.states).cwiseAbs().mean(); };
  const double before = mean_abs();
  for (int i = 0; i < 300; ++i) ag.actor_update(b);
  EXPECT_LT(mean_abs(), 0.5 * before);
}

TEST(Td3n, ActionModes) {
  auto cfg = small_td3();
  Td3nAgent ag(4, 2, 1.0, cfg, 15);
  const std::vector<double> s{0.1, 0.2, 0.3, 0.4};
  EXPECT_EQ(ag.act(s, ActMode::Eval), ag.act(s, ActMode::Eval));
  Rng rng = make_rng(1);
  for (int k = 0; k < 200; ++k)
    for (double x : ag.act(s, ActMode::Explore, &rng)) EXPECT_LE(std::fabs(x), 1.0);
  cfg.exploration_noise_std = 0.0;
  Td3nAgent quiet(4, 2, 1.0, cfg, 15);
  EXPECT_EQ(quiet.act(s, ActMode::Explore, &rng), quiet.act(s, ActMode::Eval));
}

TEST(Td3n, ConfigValidation) {
  auto cfg = small_td3();
  cfg.n_critics = 1;
  EXPECT_THROW(Td3nAgent(4, 2, 1.0, cfg, 0), ConfigError);
  cfg = small_td3();
  cfg.gamma = 1.5;
  EXPECT_THROW(Td3nAgent(4, 2, 1.0, cfg, 0), ConfigError);
}

// ---------------------------------------------------------------------------

TEST(TrainOffline, ZeroStepsLeavesAgentsUnchanged) {
  Td3nAgent ag(4, 2, 1.0, small_td3(), 20);
  GaussianPolicy bc(4, 2, 1.0, small_bc(), 20);
  const auto a0 = ag.actor();
  const auto b0 = bc.trunk();
  const auto buf = buffer_from_dataset(generate_dataset(kDenseEnvId, Tier::Expert, 500, 1));
  TrainOptions opt;
  opt.n_steps = 0;
  EXPECT_TRUE(train_offline(ag, bc, buf, opt, 20).empty());
  EXPECT_EQ(ag.actor(), a0);
  EXPECT_EQ(bc.trunk(), b0);
}

TEST(TrainOffline, SameSeedBitIdenticalAndBcIndependentOfRl) {
  const auto buf = buffer_from_dataset(generate_dataset(kDenseEnvId, Tier::Medium, 1000, 2));
  TrainOptions opt;
  opt.n_steps = 60;
  opt.log_every = 20;
  auto run = [&](bool with_rl) {
    Td3nAgent ag(4, 2, 1.0, small_td3(), 7);
    GaussianPolicy bc(4, 2, 1.0, small_bc(), 7);
    TrainOptions o = opt;
    o.train_rl = with_rl;
    auto log = train_offline(ag, bc, buf, o, 7);
    return std::tuple{ag, bc, log};
  };
  auto [a1, b1, l1] = run(true);
  auto [a2, b2, l2] = run(true);
  auto [a3, b3, l3] = run(false);
  EXPECT_EQ(a1.actor(), a2.actor());
  for (std::size_t i = 0; i < a1.critics().size(); ++i) EXPECT_EQ(a1.critics().online[i], a2.critics().online[i]);
  EXPECT_EQ(b1.trunk(), b2.trunk());
  EXPECT_EQ(b1.trunk(), b3.trunk());
  ASSERT_EQ(l1.size(), 3u);
  EXPECT_EQ(l1.back().step, 60u);
  EXPECT_EQ(l1.back().critic_loss, l2.back().critic_loss);
}

TEST(Checkpoint, AgentsRoundTrip) {
  Td3nAgent ag(4, 2, 1.0, small_td3(3), 30);
  GaussianPolicy bc(4, 2, 1.0, small_bc(), 30);
  const auto dir = (std::filesystem::temp_directory_path() / "psw_test_ckpt").string();
  std::filesystem::remove_all(dir);
  save_checkpoint(dir, ag, bc);
  for (const char* f : {"actor.bin", "actor_target.bin", "critic_0.bin", "critic_2_target.bin", "bc.bin", "hyper.json"})
    EXPECT_TRUE(std::filesystem::exists(std::filesystem::path(dir) / f)) << f;
  const auto loaded = load_checkpoint(dir);
  EXPECT_EQ(loaded.agent.actor(), ag.actor());
  EXPECT_EQ(loaded.agent.actor_target(), ag.actor_target());
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(loaded.agent.critics().online[i], ag.critics().online[i]);
    EXPECT_EQ(loaded.agent.critics().target[i], ag.critics().target[i]);
  }
  EXPECT_EQ(loaded.bc.trunk(), bc.trunk());
  EXPECT_EQ(loaded.agent.config().n_critics, 3);

  std::filesystem::remove(std::filesystem::path(dir) / "critic_1.bin");
  try {
    load_checkpoint(dir);
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("critic_1.bin"), std::string::npos);
  }
}
