#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "oracles.hpp"
#include "psw/data.hpp"
#include "psw/stats.hpp"

using namespace psw;

namespace {

Dataset dataset_with_returns(const std::vector<double>& returns) {
  Dataset d;
  int id = 0;
  for (double r : returns) {
    Trajectory tr;
    tr.id = id;
    Transition t;
    t.state = {0, 0, 0, 0};
    t.action = {0, 0};
    t.next_state = {0, 0, 0, 0};
    t.reward = r;
    t.trajectory_id = id++;
    tr.steps.push_back(t);
    d.trajectories.push_back(tr);
  }
  return d;
}

Transition marker(double v) {
  Transition t;
  t.state = {v, v, v, v};
  t.action = {v, -v};
  t.reward = v;
  t.next_state = {v, v, v, v};
  return t;
}

std::string temp_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "psw_test_data";
  std::filesystem::create_directories(dir);
  return (dir / name).string();
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

}  // namespace

TEST(GenerateDataset, ExpertReachesGoal) {
  const auto d = generate_dataset(kDenseEnvId, Tier::Expert, 20000, 1);
  const auto spec = env_spec(kDenseEnvId);
  int reached = 0;
  for (const auto& tr : d.trajectories) {
    const auto& last = tr.steps.back().next_state;
    reached += std::hypot(last[0] - spec.goal[0], last[1] - spec.goal[1]) <= 0.2 ? 1 : 0;
  }
  EXPECT_GE(reached, static_cast<int>(0.9 * static_cast<double>(d.trajectories.size())));
}

TEST(GenerateDataset, RandomTierScoresNearZero) {
  const auto d = generate_dataset(kDenseEnvId, Tier::Random, 20000, 2);
  const auto spec = env_spec(kDenseEnvId);
  std::vector<double> scores;
  for (double r : d.returns()) scores.push_back(normalized_score(spec, r));
  EXPECT_NEAR(mean(scores), 0.0, 5.0);
}

TEST(GenerateDataset, DeterministicPerSeed) {
  for (auto tier : {Tier::Random, Tier::Medium, Tier::Expert, Tier::MediumReplay}) {
    const auto a = generate_dataset(kMazeEnvId, tier, 3000, 5);
    const auto b = generate_dataset(kMazeEnvId, tier, 3000, 5);
    EXPECT_EQ(a, b) << to_string(tier);
  }
  EXPECT_FALSE(generate_dataset(kDenseEnvId, Tier::Medium, 1000, 1) ==
               generate_dataset(kDenseEnvId, Tier::Medium, 1000, 2));
}

TEST(GenerateDataset, WholeTrajectoriesCoverRequest) {
  for (const auto& id : env_ids()) {
    for (auto tier : {Tier::Random, Tier::Medium, Tier::Expert, Tier::MediumReplay}) {
      const auto d = generate_dataset(id, tier, 2500, 3);
      EXPECT_GE(d.transition_count(), 2500u);
      EXPECT_LT(d.transition_count() - d.trajectories.back().length(), 2500u);
      EXPECT_NO_THROW(check_chain(d));
      EXPECT_EQ(d.meta.env_id, id);
      EXPECT_EQ(d.meta.tier, to_string(tier));
      EXPECT_EQ(d.meta.generator_version, kGeneratorVersion);
    }
  }
  EXPECT_NO_THROW(check_chain(generate_dataset(kMazeEnvId, Tier::Partial, 5000, 3)));
}

TEST(GenerateDataset, RejectsBadRequests) {
  EXPECT_THROW(parse_tier("legendary"), ConfigError);
  EXPECT_THROW(generate_dataset(kDenseEnvId, Tier::Expert, 10, 1), ConfigError);
  EXPECT_THROW(generate_dataset(kDenseEnvId, Tier::Partial, 1000, 1), ConfigError);
}

TEST(GenerateDataset, MediumReplayMoreDiverseThanExpert) {
  const auto exp = generate_dataset(kDenseEnvId, Tier::Expert, 100000, 1);
  const auto mr = generate_dataset(kDenseEnvId, Tier::MediumReplay, 100000, 1);
  EXPECT_GT(sigma_d_returns(mr), sigma_d_returns(exp));
}

TEST(CheckChain, DetectsBrokenLinkAndEarlyDone) {
  auto d = generate_dataset(kDenseEnvId, Tier::Expert, 400, 1);
  auto broken = d;
  broken.trajectories[0].steps[3].next_state[0] += 1e-9;
  EXPECT_THROW(check_chain(broken), ConfigError);
  auto early = d;
  early.trajectories[0].steps[3].done = true;
  EXPECT_THROW(check_chain(early), ConfigError);
}

TEST(SigmaDReturns, HandEvaluations) {
  EXPECT_EQ(sigma_d_returns(dataset_with_returns({10, 10, 10})), 0.0);
  EXPECT_DOUBLE_EQ(sigma_d_returns(dataset_with_returns({0, 10})), 0.5);
  EXPECT_EQ(sigma_d_returns(dataset_with_returns({0, 0, 0})), 0.0);
  EXPECT_THROW(sigma_d_returns(dataset_with_returns({3.0})), ConfigError);
}

TEST(SigmaDReturns, MatchesPairwiseOracle) {
  Rng rng = make_rng(21);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = std::uniform_int_distribution<int>(2, 40)(rng);
    std::vector<double> rs(static_cast<std::size_t>(n));
    const double offset = uniform(rng, -100, 100);
    for (auto& r : rs) r = offset + uniform(rng, -50, 50);
    EXPECT_NEAR(sigma_d_from_returns(rs), oracle::sigma_d_returns(rs), 1e-12);
  }
}

TEST(SigmaDReturns, ScaleInvariant) {
  auto d = generate_dataset(kDenseEnvId, Tier::MediumReplay, 5000, 4);
  const double base = sigma_d_returns(d);
  for (double c : {1e-3, 0.5, 3.0, 1234.5}) {
    auto scaled = d;
    for (auto& tr : scaled.trajectories)
      for (auto& t : tr.steps) t.reward *= c;
    EXPECT_NEAR(sigma_d_returns(scaled), base, 1e-12) << c;
  }
}

TEST(SigmaDLengths, HandEvaluationsAndOracle) {
  const std::vector<double> equal{50, 50, 50};
  EXPECT_EQ(sigma_d_from_lengths(equal, 300), 0.0);
  const std::vector<double> two{100, 300};
  EXPECT_NEAR(sigma_d_from_lengths(two, 300), 1.0 / 3.0, 1e-15);
  EXPECT_THROW(sigma_d_from_lengths(std::vector<double>{4.0}, 300), ConfigError);
  Rng rng = make_rng(22);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> ls(static_cast<std::size_t>(std::uniform_int_distribution<int>(2, 30)(rng)));
    for (auto& l : ls) l = std::uniform_int_distribution<int>(1, 300)(rng);
    EXPECT_NEAR(sigma_d_from_lengths(ls, 300), oracle::population_std(ls) / 300.0, 1e-12);
  }
  const auto d = generate_dataset(kMazeEnvId, Tier::Medium, 3000, 1);
  EXPECT_NEAR(sigma_d_lengths(d, 300), oracle::population_std(d.lengths()) / 300.0, 1e-12);
}

TEST(ReplayBuffer, FromDatasetFillsInOrder) {
  const auto d = generate_dataset(kDenseEnvId, Tier::Expert, 1000, 1);
  const auto buf = buffer_from_dataset(d);
  EXPECT_EQ(buf.capacity(), d.transition_count());
  EXPECT_EQ(buf.size(), d.transition_count());
  EXPECT_EQ(buf.cursor(), 0u);
  EXPECT_EQ(buf.offline_count(), buf.size());
  std::size_t i = 0;
  for (const auto& tr : d.trajectories)
    for (const auto& t : tr.steps) {
      auto got = buf.at(i++);
      got.trajectory_id = t.trajectory_id;
      EXPECT_EQ(got, t);
    }
}

TEST(ReplayBuffer, InsertsOverwriteOldestFirst) {
  const auto d = generate_dataset(kDenseEnvId, Tier::Expert, 1000, 1);
  auto buf = buffer_from_dataset(d);
  const auto original = buf;
  const std::size_t cap = buf.capacity();
  buf.insert(marker(-7.0));
  EXPECT_EQ(buf.at(0).reward, -7.0);
  EXPECT_EQ(buf.size(), cap);
  EXPECT_EQ(buf.offline_count(), cap - 1);
  for (std::size_t k = 1; k < cap; ++k) buf.insert(marker(static_cast<double>(k)));
  EXPECT_EQ(buf.offline_count(), 0u);
  EXPECT_EQ(buf.offline_fraction(), 0.0);
  EXPECT_EQ(buf.cursor(), 0u);
}

TEST(ReplayBuffer, KInsertsLeaveTailOfOfflineData) {
  const auto d = generate_dataset(kDenseEnvId, Tier::Medium, 600, 2);
  const auto original = buffer_from_dataset(d);
  const std::size_t cap = original.capacity();
  Rng rng = make_rng(1);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t k = std::uniform_int_distribution<std::size_t>(0, cap + 50)(rng);
    auto buf = original;
    for (std::size_t i = 0; i < k; ++i) buf.insert(marker(1000.0 + static_cast<double>(i)));
    const std::size_t remaining = k >= cap ? 0 : cap - k;
    EXPECT_EQ(buf.offline_count(), remaining);
    EXPECT_EQ(buf.offline_fraction(), static_cast<double>(remaining) / static_cast<double>(cap));
    for (std::size_t i = 0; i < cap; ++i) {
      EXPECT_EQ(buf.is_offline(i), i >= k) << "k=" << k << " i=" << i;
      if (i >= k) {
        EXPECT_EQ(buf.at(i), original.at(i));
      }
    }
  }
}

TEST(ReplayBuffer, SampleSingleSlot) {
  ReplayBuffer buf(8, 4, 2);
  EXPECT_THROW(buf.sample(4, *std::make_unique<Rng>(1)), ConfigError);
  buf.insert(marker(2.5));
  Rng rng = make_rng(3);
  const auto b = buf.sample(32, rng);
  for (Eigen::Index j = 0; j < b.size(); ++j) EXPECT_EQ(b.rewards(j), 2.5);
}

TEST(ReplayBuffer, SampleDeterministicPerRngState) {
  const auto buf = buffer_from_dataset(generate_dataset(kDenseEnvId, Tier::Random, 1000, 1));
  Rng a = make_rng(10), b = make_rng(10);
  EXPECT_EQ(buf.sample(64, a).states, buf.sample(64, b).states);
}

TEST(ReplayBuffer, SampleIsUniform) {
  ReplayBuffer buf(10, 4, 2);
  for (int i = 0; i < 10; ++i) buf.insert(marker(i));
  Rng rng = make_rng(11);
  std::vector<int> counts(10, 0);
  const int draws = 100000;
  for (int k = 0; k < draws / 1000; ++k) {
    const auto b = buf.sample(1000, rng);
    for (Eigen::Index j = 0; j < b.size(); ++j) ++counts[static_cast<std::size_t>(b.rewards(j))];
  }
  const double expected = draws / 10.0;
  const double sigma = std::sqrt(draws * 0.1 * 0.9);
  for (int c : counts) EXPECT_LE(std::fabs(c - expected), 3.0 * sigma);
}

TEST(DatasetFile, RoundTripAndByteIdenticalRewrite) {
  const auto d = generate_dataset(kMazeEnvId, Tier::Medium, 1500, 9);
  const auto p1 = temp_path("a.jsonl"), p2 = temp_path("b.jsonl");
  write_dataset(p1, d);
  write_dataset(p2, d);
  EXPECT_EQ(slurp(p1), slurp(p2));
  EXPECT_EQ(slurp(dataset_meta_path(p1)), slurp(dataset_meta_path(p2)));
  EXPECT_EQ(read_dataset(p1), d);
}

TEST(DatasetFile, LineSchema) {
  const auto d = generate_dataset(kMazeEnvId, Tier::Expert, 400, 9);
  const auto p = temp_path("schema.jsonl");
  write_dataset(p, d);
  std::ifstream is(p);
  std::string line;
  std::getline(is, line);
  const auto j = nlohmann::json::parse(line);
  EXPECT_EQ(j.at("id"), 0);
  const auto& tr = d.trajectories[0];
  EXPECT_EQ(j.at("states").size(), tr.length() + 1);
  EXPECT_EQ(j.at("actions").size(), tr.length());
  EXPECT_EQ(j.at("rewards").size(), tr.length());
  EXPECT_EQ(j.at("done_last").get<bool>(), tr.steps.back().done);
  const auto meta = nlohmann::json::parse(slurp(dataset_meta_path(p)));
  EXPECT_EQ(meta.at("env_id"), std::string(kMazeEnvId));
  EXPECT_EQ(meta.at("tier"), "expert");
  EXPECT_EQ(meta.at("seed"), 9);
}

TEST(DatasetFile, ErrorsNameThePath) {
  const auto bad = temp_path("bad.jsonl");
  std::ofstream(bad) << "{\"id\": 0, \"states\": [[0,0,0,0]]\n";
  try {
    read_dataset(bad);
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find(bad), std::string::npos);
  }
  EXPECT_THROW(read_dataset(temp_path("does-not-exist.jsonl")), IoError);
}

TEST(ReferenceReturns, RegistryConstantsMatchControllers) {
  for (const auto& id : env_ids()) {
    const auto spec = env_spec(id);
    const auto refs = reference_returns(spec, 100, 0);
    EXPECT_NEAR(refs.random_ref, spec.random_ref, 1e-9 * std::max(1.0, std::fabs(spec.random_ref))) << id;
    EXPECT_NEAR(refs.expert_ref, spec.expert_ref, 1e-9 * std::max(1.0, std::fabs(spec.expert_ref))) << id;
  }
}
