#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "fixtures.hpp"
#include "setrank/training.hpp"

using namespace setrank;
using namespace setrank::testing;

namespace {

std::vector<TrainExample> tiny_examples(std::size_t count) {
  std::vector<TrainExample> out;
  for (std::size_t q = 0; q < count; ++q) {
    auto set = random_set(4, 200 + q);
    out.push_back({set, {1, 0, 0, 0}});
  }
  return out;
}

Reranker fresh_model() {
  auto c = tiny_config(2, 2);
  c.init_std = 0.1;
  return Reranker::create(c, tiny_vocab(), 4);
}

std::vector<double> flat_params(const Reranker& m) {
  std::vector<double> out;
  m.params().for_each([&](const std::string&, const Tensor& t) { out.insert(out.end(), t.data().begin(), t.data().end()); });
  return out;
}

}  // namespace

TEST(Training, SetLossIsMeanCrossEntropy) {
  auto logits = Tensor::from({2, 2}, {2.0, 0.0, 0.0, 1.0});
  std::vector<int> targets = {1, 0};
  const double want = (std::log1p(std::exp(-2.0)) + std::log1p(std::exp(-1.0))) / 2.0;
  EXPECT_NEAR(set_loss(logits, targets).item(), want, 1e-15);
}

TEST(Training, MakeExamplesUsesThreshold) {
  auto set = random_set(3, 1);
  Qrels q = {{set.query_id, {{"d0", 2}, {"d1", 1}}}};
  auto ex = make_examples({set}, q, 2);
  ASSERT_EQ(ex.size(), 1u);
  EXPECT_EQ(ex[0].targets, (std::vector<int>{1, 0, 0}));
  EXPECT_EQ(make_examples({set}, q, 1)[0].targets, (std::vector<int>{1, 1, 0}));
}

TEST(Training, AdamFirstStepMovesByLearningRate) {
  auto config = tiny_config();
  config.vocab_size = tiny_vocab().size();
  auto params = init_params(config, 1);
  auto before = params.token_embedding.data()[0];
  params.token_embedding.mutable_grad()[0] = 0.37;
  Adam adam(0.01);
  adam.step(params);
  EXPECT_NEAR(params.token_embedding.data()[0], before - 0.01, 1e-9);
}

TEST(Training, LossDecreasesOnTinyData) {
  auto model = fresh_model();
  TrainConfig tc;
  tc.steps = 150;
  tc.learning_rate = 3e-3;
  auto result = train(model, tiny_examples(3), tc);
  double early = 0, late = 0;
  for (std::size_t i = 0; i < 15; ++i) {
    early += result.log[i].loss;
    late += result.log[result.log.size() - 1 - i].loss;
  }
  EXPECT_LT(late, 0.5 * early);
}

TEST(Training, DeterministicAcrossRunsAndThreads) {
  auto data = tiny_examples(4);
  TrainConfig tc;
  tc.steps = 6;
  tc.batch = 3;
  auto a = fresh_model(), b = fresh_model(), c = fresh_model();
  train(a, data, tc);
  train(b, data, tc);
  tc.threads = 3;
  train(c, data, tc);
  EXPECT_EQ(flat_params(a), flat_params(b));
  EXPECT_EQ(flat_params(a), flat_params(c));
}

TEST(Training, ValidationAndCheckpointHooks) {
  auto model = fresh_model();
  auto data = tiny_examples(2);
  Validation val{{data[0].set}, {{data[0].set.query_id, {{"d0", 1}}}}, 1};
  TrainConfig tc;
  tc.steps = 4;
  tc.val_every = 2;
  tc.checkpoint_every = 3;
  std::vector<std::size_t> checkpoints;
  auto result = train(model, data, tc, &val, [&](std::size_t s) { checkpoints.push_back(s); });
  EXPECT_FALSE(result.log[0].val_mrr10.has_value());
  EXPECT_TRUE(result.log[1].val_mrr10.has_value());
  EXPECT_TRUE(result.log[3].val_mrr10.has_value());
  EXPECT_EQ(checkpoints, (std::vector<std::size_t>{3}));
  std::ostringstream os;
  write_train_log(os, result.log);
  EXPECT_EQ(os.str().substr(0, 25), "step,phase,loss,val_mrr10");
}

TEST(Training, NonFiniteLossThrows) {
  auto model = fresh_model();
  model.params().decoder_norm.gain.mutable_data()[0] = std::numeric_limits<double>::quiet_NaN();
  TrainConfig tc;
  tc.steps = 3;
  EXPECT_THROW(train(model, tiny_examples(2), tc), TrainingDiverged);
}

TEST(Training, ConfigValidationAndPhases) {
  TrainConfig tc;
  tc.steps = 0;
  EXPECT_THROW(tc.validate(), std::invalid_argument);
  EXPECT_EQ(parse_phase("warmup"), TrainPhase::warmup_no_feature);
  EXPECT_EQ(parse_phase("feature"), TrainPhase::with_feature);
  EXPECT_THROW(parse_phase("other"), std::invalid_argument);
  tc = {};
  tc.phase = TrainPhase::with_feature;
  EXPECT_TRUE(tc.options().use_feature);
}

TEST(Training, EmptyDataRejected) {
  auto model = fresh_model();
  EXPECT_THROW(train(model, {}, TrainConfig{}), std::invalid_argument);
}
