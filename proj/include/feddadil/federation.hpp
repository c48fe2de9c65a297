#pragma once

// Federated dictionary learning rounds, server aggregation, the FedAVG
// linear baseline, message transcripts and communication accounting.

#include <algorithm>
#include <deque>
#include <limits>
#include <map>
#include <string>

#include "json.hpp"

#include "feddadil/classifier.hpp"
#include "feddadil/dictionary.hpp"
#include "feddadil/wire.hpp"

namespace feddadil {

enum class Direction : std::uint8_t { server_to_client = 0, client_to_server = 1 };
enum class PayloadKind : std::uint8_t { dictionary = 0, model_weights = 1 };

inline const char* to_string(Direction d) {
  return d == Direction::server_to_client ? "server_to_client" : "client_to_server";
}
inline const char* to_string(PayloadKind k) {
  return k == PayloadKind::dictionary ? "dictionary" : "model_weights";
}

/// A protocol message. Payloads are FDDL dictionaries or FDCL model
/// checkpoints; there is no field that could carry barycentric coordinates.
struct Message {
  Direction direction = Direction::server_to_client;
  std::uint32_t round = 0;
  std::uint32_t client_id = 0;
  PayloadKind payload_kind = PayloadKind::dictionary;
  wire::Bytes payload;

  std::size_t payload_bytes() const { return payload.size(); }
};

namespace wire {

inline constexpr std::array<char, 4> kMessageMagic{'F', 'D', 'M', 'S'};

// Envelope: magic[4] version:u16 direction:u8 kind:u8 round:u32
//           client_id:u32 payload_len:u32 payload[payload_len]
inline Bytes encode_message(const Message& msg) {
  Bytes out(kMessageMagic.begin(), kMessageMagic.end());
  detail::put_u16(out, kVersion);
  out.push_back(static_cast<std::uint8_t>(msg.direction));
  out.push_back(static_cast<std::uint8_t>(msg.payload_kind));
  detail::put_u32(out, msg.round);
  detail::put_u32(out, msg.client_id);
  detail::put_u32(out, detail::checked_u32(msg.payload.size(), "payload length"));
  out.insert(out.end(), msg.payload.begin(), msg.payload.end());
  return out;
}

inline Message decode_message(const Bytes& frame) {
  constexpr std::size_t kEnvelope = 20;
  if (frame.size() < kEnvelope || std::memcmp(frame.data(), kMessageMagic.data(), 4) != 0) {
    throw FormatError("not a message frame");
  }
  auto u32 = [&](std::size_t at) {
    std::uint32_t v = 0;
    for (int s = 0; s < 4; ++s) v |= static_cast<std::uint32_t>(frame[at + s]) << (8 * s);
    return v;
  };
  if ((frame[4] | (frame[5] << 8)) != kVersion) throw FormatError("unsupported message version");
  if (frame[6] > 1 || frame[7] > 1) throw FormatError("unknown direction or payload kind");
  Message msg;
  msg.direction = static_cast<Direction>(frame[6]);
  msg.payload_kind = static_cast<PayloadKind>(frame[7]);
  msg.round = u32(8);
  msg.client_id = u32(12);
  const std::uint32_t len = u32(16);
  if (frame.size() != kEnvelope + len) throw FormatError("message length mismatch");
  msg.payload.assign(frame.begin() + kEnvelope, frame.end());
  return msg;
}

}  // namespace wire

/// FIFO of encoded frames, one queue per (direction, client).
class InMemoryTransport {
 public:
  void send(const Message& msg) { queue(msg.direction, msg.client_id).push_back(wire::encode_message(msg)); }

  Message receive(Direction direction, std::uint32_t client_id) {
    auto& q = queue(direction, client_id);
    detail::require<Error>(!q.empty(), "no pending message for client ", client_id);
    Message msg = wire::decode_message(q.front());
    q.pop_front();
    return msg;
  }

 private:
  std::deque<wire::Bytes>& queue(Direction d, std::uint32_t client) {
    const std::uint64_t key = (static_cast<std::uint64_t>(client) << 1) | static_cast<std::uint64_t>(d);
    return queues_[key];
  }
  std::map<std::uint64_t, std::deque<wire::Bytes>> queues_;
};

struct RoundTotals {
  std::uint32_t round = 0;
  std::size_t messages = 0;
  std::size_t payload_bytes = 0;  // full payloads, headers included
  std::size_t scalar_bytes = 0;   // 32-bit parameter scalars only
};

class RoundTranscript {
 public:
  void record(const Message& msg, std::size_t scalar_bytes) {
    if (totals_.empty() || totals_.back().round != msg.round) totals_.push_back({msg.round});
    auto& t = totals_.back();
    ++t.messages;
    t.payload_bytes += msg.payload_bytes();
    t.scalar_bytes += scalar_bytes;
    messages_.push_back(msg);
  }

  const std::vector<Message>& messages() const { return messages_; }
  const std::vector<RoundTotals>& rounds() const { return totals_; }

  /// One JSON object per message; payloads appear only as length and hash.
  std::string to_jsonl() const {
    std::string out;
    for (const auto& m : messages_) {
      nlohmann::ordered_json line;
      line["round"] = m.round;
      line["direction"] = to_string(m.direction);
      line["client_id"] = m.client_id;
      line["payload_kind"] = to_string(m.payload_kind);
      line["payload_bytes"] = m.payload_bytes();
      line["payload_hash"] = wire::content_hash(m.payload);
      out += line.dump();
      out += '\n';
    }
    return out;
  }

 private:
  std::vector<Message> messages_;
  std::vector<RoundTotals> totals_;
};

/// True when `values` appears as a contiguous run of little-endian binary32
/// or binary64 scalars anywhere in `bytes`.
inline bool contains_scalar_run(const wire::Bytes& bytes, const Vector& values) {
  auto search = [&](const wire::Bytes& needle) {
    return !needle.empty() &&
           std::search(bytes.begin(), bytes.end(), needle.begin(), needle.end()) != bytes.end();
  };
  wire::Bytes as_f32;
  wire::Bytes as_f64;
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    wire::detail::put_f32(as_f32, values(i));
    const auto bits = std::bit_cast<std::uint64_t>(values(i));
    for (int s = 0; s < 64; s += 8) as_f64.push_back(static_cast<std::uint8_t>((bits >> s) & 0xff));
  }
  return search(as_f32) || search(as_f64);
}

/// Server-side random atoms: N(0, scale^2) features and balanced one-hot
/// labels (n / n_c rows per class, remainder to the last class). The values
/// are rounded to binary32 so the broadcast copy is exact.
inline Dictionary initialize_dictionary(std::size_t num_atoms, std::size_t n, std::size_t dim,
                                        std::size_t num_classes, double scale, std::uint64_t seed) {
  detail::require<ConfigError>(num_atoms >= 1 && n >= 1 && dim >= 1 && num_classes >= 1,
                               "dictionary sizes must be positive");
  Rng rng = substream(seed, "atoms");
  std::normal_distribution<double> normal(0.0, scale);
  std::vector<std::size_t> classes(n);
  const std::size_t per_class = n / num_classes;
  for (std::size_t i = 0; i < n; ++i) {
    classes[i] = per_class == 0 ? std::min(i, num_classes - 1) : std::min(i / per_class, num_classes - 1);
  }
  std::vector<LabeledMeasure> atoms;
  for (std::size_t k = 0; k < num_atoms; ++k) {
    Matrix f(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
    for (Eigen::Index i = 0; i < f.size(); ++i) f.data()[i] = normal(rng);
    atoms.emplace_back(std::move(f), one_hot(classes, num_classes));
  }
  return wire::quantize(Dictionary(std::move(atoms)));
}

/// Row-wise mean of N dictionary versions, accumulated as a running mean so
/// that N identical versions aggregate to exactly that version.
inline Dictionary server_aggregate(std::span<const Dictionary> versions) {
  detail::require(!versions.empty(), "aggregation needs at least one version");
  Dictionary mean = versions[0];
  for (std::size_t v = 1; v < versions.size(); ++v) {
    detail::require(mean.same_shape(versions[v]), "dictionary versions differ in shape");
    mean = atom_combine(mean, atom_combine(versions[v], mean, -1.0), 1.0 / static_cast<double>(v + 1));
  }
  return mean;
}

struct FedConfig {
  std::size_t rounds = 10;
  std::size_t num_atoms = 3;
  std::size_t atom_size = 100;
  double init_scale = 1.0;
  UpdateConfig update;  // epochs E, batch size n_b, step sizes, objective
  bool record_loss = true;
  std::uint64_t seed = 0;
};

struct FedResult {
  Dictionary final_dictionary;
  std::vector<LossReport> history;  // one entry per round, after aggregation
  RoundTranscript transcript;
};

namespace detail {

inline void check_federation(std::span<const ClientState> clients) {
  require<ConfigError>(clients.size() >= 2, "federation needs at least two clients");
  for (std::size_t l = 0; l + 1 < clients.size(); ++l) {
    require<ConfigError>(clients[l].data.has_labels(), "source client ", clients[l].id,
                         " has no labels");
    require<ConfigError>(clients[l].data.dim() == clients.back().data.dim(),
                         "clients disagree on feature dimension");
  }
  require<ConfigError>(!clients.back().data.has_labels(),
                       "the target client must not carry labels");
}

}  // namespace detail

/// Runs the federated protocol over an in-memory transport. Clients are
/// ordered sources first, target last; their alphas are updated in place.
inline FedResult run_feddadil(std::vector<ClientState>& clients, const FedConfig& config) {
  detail::check_federation(clients);
  const std::size_t num_classes = clients.front().data.num_classes();
  Dictionary global = initialize_dictionary(config.num_atoms, config.atom_size,
                                            clients.front().data.dim(), num_classes,
                                            config.init_scale, config.seed);
  for (auto& c : clients) {
    if (c.alpha.size() != config.num_atoms) c.alpha = BarycentricCoordinates::uniform(config.num_atoms);
  }

  InMemoryTransport transport;
  RoundTranscript transcript;
  std::vector<LossReport> history;
  const std::size_t scalar_bytes = wire::dictionary_scalar_bytes(global);

  for (std::size_t r = 1; r <= config.rounds; ++r) {
    const auto round = static_cast<std::uint32_t>(r);
    UpdateConfig update = config.update;
    update.seed = detail::splitmix64(config.seed ^ detail::splitmix64(r));

    std::vector<Dictionary> versions;
    for (auto& client : clients) {
      const auto id = static_cast<std::uint32_t>(client.id);
      const Message down{Direction::server_to_client, round, id, PayloadKind::dictionary,
                         wire::encode_dictionary(global)};
      transport.send(down);
      transcript.record(down, scalar_bytes);

      const Message received = transport.receive(Direction::server_to_client, id);
      const Dictionary local = wire::decode_dictionary(received.payload);
      const Dictionary updated = client_update(client, local, update);

      const Message up{Direction::client_to_server, round, id, PayloadKind::dictionary,
                       wire::encode_dictionary(updated)};
      transport.send(up);
      transcript.record(up, scalar_bytes);
    }
    for (const auto& client : clients) {
      const Message msg =
          transport.receive(Direction::client_to_server, static_cast<std::uint32_t>(client.id));
      versions.push_back(wire::decode_dictionary(msg.payload));
    }
    global = server_aggregate(versions);
    if (config.record_loss) history.push_back(global_loss(clients, global, update.objective));
  }
  return {std::move(global), std::move(history), std::move(transcript)};
}

struct FedAvgConfig {
  std::size_t rounds = 20;
  SgdConfig local{1, 32, 0.1};  // E local epochs per round
  std::uint64_t seed = 0;
};

struct FedAvgResult {
  LinearClassifier model;
  RoundTranscript transcript;
};

/// FedAVG on a softmax linear classifier over the labeled clients: common
/// initialisation, E local epochs per client, unweighted mean of parameters.
inline FedAvgResult fedavg_classifier(std::span<const LabeledMeasure> clients,
                                      const FedAvgConfig& config) {
  detail::require<ConfigError>(!clients.empty(), "FedAVG needs at least one labeled client");
  for (const auto& c : clients) {
    detail::require<ConfigError>(c.has_labels(), "FedAVG clients must be labeled");
    detail::require(c.dim() == clients[0].dim() && c.num_classes() == clients[0].num_classes(),
                    "FedAVG clients disagree on shape");
  }
  Rng init_rng = substream(config.seed, "fedavg-init");
  std::normal_distribution<double> normal(0.0, 0.01);
  LinearClassifier global = LinearClassifier::zeros(clients[0].num_classes(), clients[0].dim());
  for (Eigen::Index i = 0; i < global.weights.size(); ++i) global.weights.data()[i] = normal(init_rng);

  RoundTranscript transcript;
  const std::size_t scalars = global.num_classes() * (global.dim() + 1) * wire::kScalarBytes;
  for (std::size_t r = 1; r <= config.rounds; ++r) {
    LinearClassifier sum = LinearClassifier::zeros(global.num_classes(), global.dim());
    for (std::size_t l = 0; l < clients.size(); ++l) {
      const auto round = static_cast<std::uint32_t>(r);
      const auto id = static_cast<std::uint32_t>(l);
      transcript.record({Direction::server_to_client, round, id, PayloadKind::model_weights,
                         wire::encode_classifiers({global})},
                        scalars);
      LinearClassifier local = global;
      Rng rng = substream(config.seed, "fedavg-batches", r * 1'000'003ULL + l);
      train_softmax(local, clients[l].features(), clients[l].labels(), config.local, rng);
      transcript.record({Direction::client_to_server, round, id, PayloadKind::model_weights,
                         wire::encode_classifiers({local})},
                        scalars);
      sum.weights += local.weights;
      sum.bias += local.bias;
    }
    const double count = static_cast<double>(clients.size());
    global.weights = sum.weights / count;
    global.bias = sum.bias / count;
  }
  return {std::move(global), std::move(transcript)};
}

/// |P| = K * n * (d + n_c) scalars exchanged per dictionary message.
inline std::uint64_t communication_cost(std::uint64_t num_atoms, std::uint64_t n,
                                        std::uint64_t dim, std::uint64_t num_classes) {
  detail::require<ConfigError>(num_atoms > 0 && n > 0 && dim > 0 && num_classes > 0,
                               "communication cost needs positive sizes");
  std::uint64_t out = 0;
  std::uint64_t width = 0;
  if (__builtin_add_overflow(dim, num_classes, &width) ||
      __builtin_mul_overflow(num_atoms, n, &out) || __builtin_mul_overflow(out, width, &out)) {
    throw DomainError("communication cost overflows 64 bits");
  }
  return out;
}

struct CommunicationReport {
  std::uint64_t parameters = 0;
  std::uint64_t bits = 0;  // at 32-bit precision
  std::uint64_t reference_parameters = 0;
  double ratio = 0.0;      // parameters / reference_parameters
};

inline CommunicationReport communication_report(std::uint64_t num_atoms, std::uint64_t n,
                                                std::uint64_t dim, std::uint64_t num_classes,
                                                std::uint64_t reference_parameters) {
  CommunicationReport r;
  r.parameters = communication_cost(num_atoms, n, dim, num_classes);
  if (__builtin_mul_overflow(r.parameters, std::uint64_t{32}, &r.bits)) {
    throw DomainError("bit count overflows 64 bits");
  }
  r.reference_parameters = reference_parameters;
  r.ratio = reference_parameters ? static_cast<double>(r.parameters) /
                                       static_cast<double>(reference_parameters)
                                 : 0.0;
  return r;
}

}  // namespace feddadil
