#include <gtest/gtest.h>

#include "feddadil/federation.hpp"
#include "oracles.hpp"

using namespace feddadil;

namespace {

LabeledMeasure blobs(Eigen::Index per_class, Eigen::Index d, Eigen::Index nc, double shift,
                     std::mt19937_64& rng) {
  Matrix x = oracle::gaussian(per_class * nc, d, rng, 0.5);
  std::vector<std::size_t> cls;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const auto c = static_cast<std::size_t>(i % nc);
    x(i, c % static_cast<std::size_t>(d)) += 3.0 * (c % 2 == 0 ? 1.0 : -1.0);
    x.row(i).array() += shift;
    cls.push_back(c);
  }
  return LabeledMeasure(std::move(x), one_hot(cls, static_cast<std::size_t>(nc)));
}

std::vector<ClientState> federation(std::uint64_t seed, std::size_t k) {
  std::mt19937_64 rng(seed);
  std::vector<ClientState> out;
  for (std::size_t l = 0; l < 3; ++l) {
    LabeledMeasure data = blobs(6, 2, 2, 0.7 * static_cast<double>(l), rng);
    if (l == 2) data = data.without_labels();
    out.push_back({l, std::move(data), BarycentricCoordinates::uniform(k), std::nullopt});
  }
  return out;
}

FedConfig fed_config(std::size_t rounds, std::size_t epochs = 1) {
  FedConfig c;
  c.rounds = rounds;
  c.num_atoms = 2;
  c.atom_size = 6;
  c.update.epochs = epochs;
  c.update.batch_size = 3;
  c.update.eta = 0.5;
  c.update.alpha_eta = 0.05;
  c.update.objective = {1.0, 20, 1e-6, 0};
  c.seed = 3;
  return c;
}

Dictionary single_point(double x, double y0) {
  Matrix f(1, 1), l(1, 2);
  f << x;
  l << y0, 1.0 - y0;
  return Dictionary({LabeledMeasure(f, l)});
}

}  // namespace

TEST(ServerAggregate, IdenticalVersionsReturnThatDictionary) {
  const Dictionary d = initialize_dictionary(3, 7, 4, 3, 1.0, 11);
  const std::vector<Dictionary> versions{d, d, d};
  EXPECT_EQ(server_aggregate(versions), d);
  std::mt19937_64 rng(1);
  std::vector<LabeledMeasure> atoms;
  for (int k = 0; k < 2; ++k) atoms.emplace_back(oracle::gaussian(5, 3, rng), oracle::soft_labels(5, 4, rng));
  const Dictionary r(atoms);
  const std::vector<Dictionary> many(7, r);
  EXPECT_EQ(server_aggregate(many), r);
}

TEST(ServerAggregate, OppositeSupportsCancel) {
  std::mt19937_64 rng(2);
  const Matrix z = oracle::gaussian(4, 3, rng);
  const Matrix y = oracle::soft_labels(4, 2, rng);
  const std::vector<Dictionary> versions{Dictionary({LabeledMeasure(z, y)}),
                                         Dictionary({LabeledMeasure(Matrix(-z), y)})};
  const Dictionary mean = server_aggregate(versions);
  EXPECT_EQ(mean.atom(0).features().cwiseAbs().maxCoeff(), 0.0);
  EXPECT_TRUE(mean.labels_on_simplex(1e-12));
}

TEST(ServerAggregate, EntrywiseMeanOfThreeVersions) {
  const std::vector<Dictionary> versions{single_point(1.0, 1.0), single_point(2.0, 0.5),
                                         single_point(6.0, 0.0)};
  const Dictionary mean = server_aggregate(versions);
  EXPECT_NEAR(mean.atom(0).features()(0, 0), 3.0, 1e-15);
  EXPECT_NEAR(mean.atom(0).labels()(0, 0), 0.5, 1e-15);
  EXPECT_NEAR(mean.atom(0).labels()(0, 1), 0.5, 1e-15);
}

TEST(ServerAggregate, Errors) {
  EXPECT_THROW(server_aggregate(std::vector<Dictionary>{}), ShapeError);
  const std::vector<Dictionary> mixed{single_point(0, 1), initialize_dictionary(2, 1, 1, 2, 1.0, 0)};
  EXPECT_THROW(server_aggregate(mixed), ShapeError);
}

TEST(InitializeDictionary, BalancedLabelsAndExactBroadcast) {
  const Dictionary d = initialize_dictionary(2, 7, 3, 3, 2.0, 5);
  const RowVector counts = d.atom(0).labels().colwise().sum();
  EXPECT_EQ(counts(0), 2.0);
  EXPECT_EQ(counts(1), 2.0);
  EXPECT_EQ(counts(2), 3.0);
  EXPECT_EQ(wire::quantize(d), d);
  EXPECT_EQ(initialize_dictionary(2, 7, 3, 3, 2.0, 5), d);
  EXPECT_FALSE(initialize_dictionary(2, 7, 3, 3, 2.0, 6) == d);
  EXPECT_THROW(initialize_dictionary(0, 7, 3, 3, 1.0, 5), ConfigError);
}

TEST(RunFedDadil, ZeroRoundsReturnsTheInitialDictionary) {
  auto clients = federation(1, 2);
  const FedResult res = run_feddadil(clients, fed_config(0));
  EXPECT_TRUE(res.history.empty());
  EXPECT_TRUE(res.transcript.messages().empty());
  EXPECT_EQ(res.final_dictionary, initialize_dictionary(2, 6, 2, 2, 1.0, 3));
}

TEST(RunFedDadil, ZeroEpochsLeaveTheDictionaryUnchanged) {
  auto clients = federation(2, 2);
  const FedResult res = run_feddadil(clients, fed_config(3, 0));
  EXPECT_EQ(res.final_dictionary, initialize_dictionary(2, 6, 2, 2, 1.0, 3));
  EXPECT_EQ(res.history.size(), 3u);
  for (const auto& c : clients) EXPECT_EQ(c.alpha.weights(), BarycentricCoordinates::uniform(2).weights());
}

TEST(RunFedDadil, TranscriptAccounting) {
  auto clients = federation(3, 2);
  const FedConfig cfg = fed_config(3);
  const FedResult res = run_feddadil(clients, cfg);
  const std::size_t n_clients = clients.size();
  const std::size_t per_message = 2 * 6 * (2 + 2);
  ASSERT_EQ(res.transcript.rounds().size(), 3u);
  for (const auto& r : res.transcript.rounds()) {
    EXPECT_EQ(r.messages, 2 * n_clients);
    EXPECT_EQ(r.scalar_bytes, 2 * n_clients * per_message * 4);
    EXPECT_EQ(r.payload_bytes, 2 * n_clients * (per_message * 4 + wire::kHeaderBytes));
  }
  // Order within a round: each client receives, then answers.
  const auto& msgs = res.transcript.messages();
  for (std::size_t i = 0; i < msgs.size(); ++i) {
    EXPECT_EQ(msgs[i].client_id, (i / 2) % n_clients);
    EXPECT_EQ(msgs[i].direction, i % 2 == 0 ? Direction::server_to_client : Direction::client_to_server);
    EXPECT_EQ(msgs[i].payload_kind, PayloadKind::dictionary);
    EXPECT_EQ(wire::decode_dictionary(msgs[i].payload).parameter_count(), per_message);
  }
  const std::string jsonl = res.transcript.to_jsonl();
  EXPECT_EQ(static_cast<std::size_t>(std::count(jsonl.begin(), jsonl.end(), '\n')), msgs.size());
  EXPECT_NE(jsonl.find("\"payload_hash\""), std::string::npos);
}

// A vertex alpha such as (0, 1, 0) also occurs inside one-hot label rows, so
// only coordinates with two or more nonzero entries are scanned.
TEST(RunFedDadil, PayloadsNeverCarryCoordinates) {
  std::size_t scanned = 0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    auto clients = federation(10 + seed, 3);
    FedConfig cfg = fed_config(2);
    cfg.num_atoms = 3;
    cfg.seed = seed;
    const FedResult res = run_feddadil(clients, cfg);
    for (const auto& c : clients) {
      if ((c.alpha.weights().array() > 0.0).count() < 2) continue;
      ++scanned;
      for (const auto& m : res.transcript.messages()) {
        EXPECT_FALSE(contains_scalar_run(m.payload, c.alpha.weights()));
        EXPECT_FALSE(contains_scalar_run(wire::encode_message(m), c.alpha.weights()));
      }
    }
  }
  EXPECT_GE(scanned, 6u);
}

TEST(ContainsScalarRun, FindsPlantedValues) {
  Vector v(3);
  v << 0.125, 0.3, 0.575;
  wire::Bytes bytes{1, 2, 3};
  for (Eigen::Index i = 0; i < 3; ++i) wire::detail::put_f32(bytes, v(i));
  bytes.push_back(9);
  EXPECT_TRUE(contains_scalar_run(bytes, v));
  Vector w = v;
  w(1) = 0.31;
  EXPECT_FALSE(contains_scalar_run(bytes, w));
}

TEST(RunFedDadil, DeterministicUnderSeed) {
  auto a = federation(4, 2);
  auto b = federation(4, 2);
  const FedResult ra = run_feddadil(a, fed_config(2));
  const FedResult rb = run_feddadil(b, fed_config(2));
  EXPECT_EQ(ra.final_dictionary, rb.final_dictionary);
  EXPECT_EQ(ra.transcript.to_jsonl(), rb.transcript.to_jsonl());
  EXPECT_EQ(a[2].alpha.weights(), b[2].alpha.weights());
}

TEST(RunFedDadil, GlobalLossDecreasesOnAverage) {
  auto clients = federation(5, 2);
  FedConfig cfg = fed_config(20);
  const FedResult res = run_feddadil(clients, cfg);
  ASSERT_EQ(res.history.size(), 20u);
  auto window = [&](std::size_t end) {
    double s = 0.0;
    for (std::size_t i = end - 5; i < end; ++i) s += res.history[i].value;
    return s / 5.0;
  };
  EXPECT_LT(window(20), window(5));
  auto init_clients = federation(5, 2);
  EXPECT_LT(res.history.back().value,
            global_loss(init_clients, initialize_dictionary(2, 6, 2, 2, 1.0, 3), cfg.update.objective).value);
}

TEST(RunFedDadil, RejectsBadFederations) {
  auto clients = federation(6, 2);
  std::vector<ClientState> one{clients[0]};
  EXPECT_THROW(run_feddadil(one, fed_config(1)), ConfigError);
  std::vector<ClientState> labeled_target{clients[0], clients[1]};
  EXPECT_THROW(run_feddadil(labeled_target, fed_config(1)), ConfigError);
  std::vector<ClientState> unlabeled_source{clients[2], clients[2]};
  EXPECT_THROW(run_feddadil(unlabeled_source, fed_config(1)), ConfigError);
}

TEST(FedAvg, OneClientIsCentralisedGradientDescent) {
  std::mt19937_64 rng(7);
  const std::vector<LabeledMeasure> data{blobs(10, 3, 3, 0.0, rng)};
  FedAvgConfig cfg;
  cfg.rounds = 0;
  cfg.local = {1, 0, 0.3};
  cfg.seed = 9;
  const LinearClassifier init = fedavg_classifier(data, cfg).model;
  EXPECT_LT(init.weights.cwiseAbs().maxCoeff(), 0.1);

  // Full-batch gradient descent on the cross-entropy, written out directly.
  Matrix w = init.weights;
  Vector b = init.bias;
  const Matrix& x = data[0].features();
  const Matrix& y = data[0].labels();
  for (int step = 0; step < 8; ++step) {
    Matrix gw = Matrix::Zero(w.rows(), w.cols());
    Vector gb = Vector::Zero(b.size());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      Vector logits = w * x.row(i).transpose() + b;
      logits = (logits.array() - logits.maxCoeff()).exp();
      logits /= logits.sum();
      const Vector r = logits - y.row(i).transpose();
      gw += r * x.row(i);
      gb += r;
    }
    w -= 0.3 * gw / static_cast<double>(x.rows());
    b -= 0.3 * gb / static_cast<double>(x.rows());
  }
  cfg.rounds = 8;
  const LinearClassifier fed = fedavg_classifier(data, cfg).model;
  EXPECT_LT((fed.weights - w).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((fed.bias - b).cwiseAbs().maxCoeff(), 1e-12);

  cfg.rounds = 2;
  cfg.local.epochs = 4;
  EXPECT_LT((fedavg_classifier(data, cfg).model.weights - w).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(FedAvg, IdenticalClientsMatchASingleClient) {
  std::mt19937_64 rng(8);
  const LabeledMeasure d = blobs(8, 2, 2, 0.0, rng);
  FedAvgConfig cfg;
  cfg.rounds = 5;
  cfg.local = {2, 0, 0.2};
  const std::vector<LabeledMeasure> one{d};
  const std::vector<LabeledMeasure> two{d, d};
  EXPECT_EQ(fedavg_classifier(one, cfg).model, fedavg_classifier(two, cfg).model);
}

TEST(FedAvg, SeparableDataIsLearned) {
  std::mt19937_64 rng(9);
  const std::vector<LabeledMeasure> clients{blobs(20, 2, 2, 0.0, rng), blobs(20, 2, 2, 0.5, rng)};
  FedAvgConfig cfg;
  cfg.rounds = 200;
  cfg.local = {1, 8, 0.1};
  const FedAvgResult res = fedavg_classifier(clients, cfg);
  for (const auto& c : clients) {
    const Matrix p = res.model.predict_proba(c.features());
    Eigen::Index correct = 0;
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      Eigen::Index a, b;
      p.row(i).maxCoeff(&a);
      c.labels().row(i).maxCoeff(&b);
      correct += a == b;
    }
    EXPECT_GE(static_cast<double>(correct) / static_cast<double>(p.rows()), 0.99);
  }
  EXPECT_EQ(res.transcript.messages().size(), 200u * 2u * 2u);
  EXPECT_EQ(res.transcript.messages()[0].payload_kind, PayloadKind::model_weights);
  EXPECT_EQ(res.transcript.rounds()[0].scalar_bytes, 4u * (2u * 3u) * 4u);
}

TEST(FedAvg, Errors) {
  std::mt19937_64 rng(10);
  EXPECT_THROW(fedavg_classifier(std::vector<LabeledMeasure>{}, {}), ConfigError);
  const std::vector<LabeledMeasure> unlabeled{blobs(3, 2, 2, 0.0, rng).without_labels()};
  EXPECT_THROW(fedavg_classifier(unlabeled, {}), ConfigError);
  const std::vector<LabeledMeasure> single_class{
      LabeledMeasure(oracle::gaussian(4, 2, rng), one_hot({0, 0, 0, 0}, 2))};
  FedAvgConfig cfg;
  cfg.rounds = 3;
  EXPECT_TRUE(fedavg_classifier(single_class, cfg).model.weights.allFinite());
}

TEST(CommunicationCost, Examples) {
  EXPECT_EQ(communication_cost(3, 500, 64, 10), 111'000u);
  EXPECT_EQ(communication_report(3, 500, 64, 10, 0).bits, 3'552'000u);
  EXPECT_EQ(communication_cost(1, 1, 1, 1), 2u);
  const std::uint64_t d = 2048;
  const std::uint64_t expected = 3ULL * 2170ULL * (d + 31ULL);
  const CommunicationReport r = communication_report(3, 2170, d, 31, 25'600'000);
  EXPECT_EQ(r.parameters, expected);
  EXPECT_EQ(r.ratio, static_cast<double>(expected) / 25'600'000.0);
  EXPECT_THROW(communication_cost(0, 1, 1, 1), ConfigError);
  EXPECT_THROW(communication_cost(1ULL << 40, 1ULL << 20, 1ULL << 10, 1), DomainError);
}

TEST(Wire, DictionaryRoundTrip) {
  std::mt19937_64 rng(11);
  std::vector<LabeledMeasure> atoms;
  for (int k = 0; k < 3; ++k) atoms.emplace_back(oracle::gaussian(5, 4, rng), oracle::soft_labels(5, 3, rng));
  const Dictionary d(atoms);
  const wire::Bytes bytes = wire::encode_dictionary(d);
  EXPECT_EQ(bytes.size(), wire::kHeaderBytes + 3u * 5u * 7u * 4u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "FDDL");
  const Dictionary back = wire::decode_dictionary(bytes);
  ASSERT_TRUE(back.same_shape(d));
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_EQ(back.atom(k).features(), d.atom(k).features().cast<float>().cast<double>());
    EXPECT_EQ(back.atom(k).labels(), d.atom(k).labels().cast<float>().cast<double>());
  }
  EXPECT_EQ(wire::encode_dictionary(back), bytes);
}

TEST(Wire, MalformedPayloadsAreRejected) {
  const wire::Bytes good = wire::encode_dictionary(initialize_dictionary(2, 3, 2, 2, 1.0, 0));
  wire::Bytes truncated(good.begin(), good.end() - 1);
  EXPECT_THROW(wire::decode_dictionary(truncated), wire::FormatError);
  wire::Bytes trailing = good;
  trailing.push_back(0);
  EXPECT_THROW(wire::decode_dictionary(trailing), wire::FormatError);
  wire::Bytes magic = good;
  magic[0] = 'X';
  EXPECT_THROW(wire::decode_dictionary(magic), wire::FormatError);
  wire::Bytes version = good;
  version[4] = 9;
  EXPECT_THROW(wire::decode_dictionary(version), wire::FormatError);
  EXPECT_THROW(wire::decode_dictionary({}), wire::FormatError);
}

TEST(Wire, ClassifierAndMessageRoundTrip) {
  LinearClassifier m = LinearClassifier::zeros(3, 2);
  m.weights << 1, 2, 3, 4, 5, 6;
  m.bias << -1, 0, 1;
  const auto back = wire::decode_classifiers(wire::encode_classifiers({m, m}));
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1], m);

  const Message msg{Direction::client_to_server, 7, 3, PayloadKind::model_weights, wire::encode_classifiers({m})};
  const wire::Bytes frame = wire::encode_message(msg);
  const Message out = wire::decode_message(frame);
  EXPECT_EQ(out.direction, msg.direction);
  EXPECT_EQ(out.round, 7u);
  EXPECT_EQ(out.client_id, 3u);
  EXPECT_EQ(out.payload_kind, msg.payload_kind);
  EXPECT_EQ(out.payload, msg.payload);
  wire::Bytes bad = frame;
  bad[6] = 5;
  EXPECT_THROW(wire::decode_message(bad), wire::FormatError);
  bad = frame;
  bad.pop_back();
  EXPECT_THROW(wire::decode_message(bad), wire::FormatError);
}

TEST(InMemoryTransport, QueuesPerClientAndDirection) {
  InMemoryTransport t;
  t.send({Direction::server_to_client, 1, 0, PayloadKind::dictionary, {1}});
  t.send({Direction::server_to_client, 1, 1, PayloadKind::dictionary, {2}});
  t.send({Direction::server_to_client, 2, 0, PayloadKind::dictionary, {3}});
  EXPECT_EQ(t.receive(Direction::server_to_client, 1).payload, wire::Bytes{2});
  EXPECT_EQ(t.receive(Direction::server_to_client, 0).payload, wire::Bytes{1});
  EXPECT_EQ(t.receive(Direction::server_to_client, 0).round, 2u);
  EXPECT_THROW(t.receive(Direction::client_to_server, 0), Error);
}
