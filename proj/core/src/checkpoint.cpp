#include "sparseflow/checkpoint.hpp"

#include "sparseflow/csv.hpp"

#include <json.hpp>
#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace sparseflow {
namespace {

using nlohmann::json;

constexpr char kMagic[] = "SPARSEFLOW-CHECKPOINT\n";
constexpr std::size_t kMagicLen = sizeof(kMagic) - 1;

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

void put_reals(std::string& out, const Eigen::VectorXd& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) put_u64(out, std::bit_cast<std::uint64_t>(v[i]));
}

Eigen::VectorXd get_reals(const std::string& buf, std::size_t& pos, std::size_t n) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    v[static_cast<Eigen::Index>(i)] = std::bit_cast<double>(get_u64(buf.data() + pos));
    pos += 8;
  }
  return v;
}

json history_json(const PruneHistory& h) {
  json rows = json::array();
  for (const auto& r : h.records) {
    rows.push_back({std::to_string(r.iter), format_real(r.prune_ratio),
                    std::to_string(r.params_remaining), format_real(r.train_nll),
                    format_real(r.val_nll), format_real(r.test_nll), std::to_string(r.n_evals),
                    format_real(r.seconds), format_real(r.val_acc), format_real(r.test_acc)});
  }
  return {{"records", rows}, {"aborted", h.aborted}};
}

PruneHistory history_from_json(const json& j) {
  PruneHistory h;
  h.aborted = j.at("aborted").get<std::string>();
  for (const auto& row : j.at("records")) {
    auto s = [&row](std::size_t i) { return row.at(i).get<std::string>(); };
    PruneRecord r;
    r.iter = std::stoull(s(0));
    r.prune_ratio = std::stod(s(1));
    r.params_remaining = std::stoull(s(2));
    r.train_nll = std::stod(s(3));
    r.val_nll = std::stod(s(4));
    r.test_nll = std::stod(s(5));
    r.n_evals = std::stoull(s(6));
    r.seconds = std::stod(s(7));
    r.val_acc = std::stod(s(8));
    r.test_acc = std::stod(s(9));
    h.records.push_back(r);
  }
  return h;
}

std::string read_file(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw CheckpointNotFound("checkpoint not found: " + path.string());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointNotFound("cannot open checkpoint " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Parsed {
  json header;
  std::string header_text;
  std::size_t payload_offset = 0;
};

Parsed parse_header(const std::string& buf, const std::filesystem::path& path) {
  if (buf.size() < kMagicLen || buf.compare(0, kMagicLen, kMagic) != 0) {
    if (buf.size() < kMagicLen && std::string(kMagic).compare(0, buf.size(), buf) == 0) {
      throw CheckpointTruncated("checkpoint truncated before its header: " + path.string());
    }
    throw CheckpointError("not a sparseflow checkpoint: " + path.string());
  }
  if (buf.size() < kMagicLen + 8) throw CheckpointTruncated("checkpoint truncated: " + path.string());
  const std::uint64_t hlen = get_u64(buf.data() + kMagicLen);
  if (buf.size() < kMagicLen + 8 + hlen) throw CheckpointTruncated("checkpoint header truncated: " + path.string());
  Parsed p;
  p.header_text = buf.substr(kMagicLen + 8, hlen);
  p.header = json::parse(p.header_text, nullptr, false);
  if (p.header.is_discarded() || !p.header.is_object()) {
    throw CheckpointError("checkpoint header is not valid JSON: " + path.string());
  }
  p.payload_offset = kMagicLen + 8 + hlen;
  return p;
}

}  // namespace

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 computation failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

std::string save_checkpoint(const CheckpointState& s, const std::filesystem::path& path) {
  const auto n = static_cast<std::size_t>(s.params.size());
  if (s.mask.size() != n) throw ContractError("checkpoint mask and params differ in length");
  const bool has_adam = s.adam.m.size() > 0;
  if (has_adam && (static_cast<std::size_t>(s.adam.m.size()) != n ||
                   static_cast<std::size_t>(s.adam.v.size()) != n)) {
    throw ContractError("checkpoint optimizer state does not match params");
  }

  std::string payload;
  payload.reserve(8 * n * 4);
  put_reals(payload, s.params);
  put_reals(payload, s.mask.as_vector());
  if (has_adam) {
    put_reals(payload, s.adam.m);
    put_reals(payload, s.adam.v);
  }

  json config = json::parse(s.config_json, nullptr, false);
  if (config.is_discarded()) throw ContractError("checkpoint config is not valid JSON");
  json rng = json::object();
  for (const auto& [name, st] : s.rng) rng[name] = st;
  json header{{"format_version", kCheckpointVersion},
              {"kind", s.kind},
              {"config", config},
              {"spec",
               {{"layer_sizes", s.spec.layer_sizes},
                {"activation", std::string(to_string(s.spec.activation))},
                {"time_mode", "concat"}}},
              {"iter", s.iter},
              {"prune_ratio", format_real(s.prune_ratio)},
              {"shapes", {{"params", n}, {"mask", n}, {"adam_m", has_adam ? n : 0}, {"adam_v", has_adam ? n : 0}}},
              {"adam_step", s.adam.step},
              {"history", history_json(s.history)},
              {"rng", rng},
              {"payload_bytes", payload.size()}};
  const std::string hash = sha256_hex(header.dump() + payload);
  header["content_hash"] = hash;
  const std::string htext = header.dump();

  std::string file(kMagic, kMagicLen);
  put_u64(file, htext.size());
  file += htext;
  file += payload;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  // Write-then-rename so a killed process never leaves a half-written file.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
    out.write(file.data(), static_cast<std::streamsize>(file.size()));
    if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
  return hash;
}

CheckpointState load_checkpoint(const std::filesystem::path& path) {
  const std::string buf = read_file(path);
  Parsed p = parse_header(buf, path);
  json& h = p.header;
  if (!h.contains("format_version") || !h["format_version"].is_number_unsigned()) {
    throw CheckpointError("checkpoint header lacks a format version: " + path.string());
  }
  const auto version = h["format_version"].get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointVersionMismatch("checkpoint format version " + std::to_string(version) +
                                    " is not supported (this build reads version " +
                                    std::to_string(kCheckpointVersion) + "): " + path.string());
  }
  try {
    const std::size_t payload_bytes = h.at("payload_bytes").get<std::size_t>();
    if (buf.size() - p.payload_offset < payload_bytes) {
      throw CheckpointTruncated("checkpoint payload truncated: " + path.string());
    }
    const std::string payload = buf.substr(p.payload_offset, payload_bytes);
    const std::string stored = h.at("content_hash").get<std::string>();
    json unhashed = h;
    unhashed.erase("content_hash");
    if (sha256_hex(unhashed.dump() + payload) != stored || buf.size() - p.payload_offset != payload_bytes) {
      throw CheckpointHashMismatch("checkpoint content hash mismatch: " + path.string());
    }

    CheckpointState s;
    s.kind = h.at("kind").get<std::string>();
    s.config_json = h.at("config").dump(2);
    const auto& spec = h.at("spec");
    s.spec.layer_sizes = spec.at("layer_sizes").get<std::vector<std::size_t>>();
    s.spec.activation = parse_activation(spec.at("activation").get<std::string>());
    s.iter = h.at("iter").get<std::size_t>();
    s.prune_ratio = std::stod(h.at("prune_ratio").get<std::string>());
    const auto& shapes = h.at("shapes");
    const std::size_t n = shapes.at("params").get<std::size_t>();
    const std::size_t na = shapes.at("adam_m").get<std::size_t>();
    if (payload_bytes != 8 * (2 * n + 2 * na)) throw CheckpointError("checkpoint shapes do not match payload");
    std::size_t pos = 0;
    s.params = get_reals(payload, pos, n);
    const Eigen::VectorXd mask = get_reals(payload, pos, n);
    std::vector<std::uint8_t> bits(n);
    for (std::size_t i = 0; i < n; ++i) bits[i] = mask[static_cast<Eigen::Index>(i)] != 0.0 ? 1 : 0;
    s.mask = Mask(std::move(bits));
    if (na > 0) {
      s.adam.m = get_reals(payload, pos, na);
      s.adam.v = get_reals(payload, pos, na);
    }
    s.adam.step = h.at("adam_step").get<std::size_t>();
    s.history = history_from_json(h.at("history"));
    for (const auto& [name, st] : h.at("rng").items()) s.rng[name] = st.get<Rng::State>();
    return s;
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint header: ") + e.what());
  }
}

std::string checkpoint_hash(const std::filesystem::path& path) {
  const std::string buf = read_file(path);
  const Parsed p = parse_header(buf, path);
  return p.header.value("content_hash", std::string());
}

CheckpointState checkpoint_from_snapshot(const Snapshot& snap, const PruneHistory& history,
                                         const MlpSpec& spec, const std::string& kind,
                                         const std::string& config_json) {
  CheckpointState s;
  s.kind = kind;
  s.config_json = config_json;
  s.spec = spec;
  s.iter = snap.iter;
  s.prune_ratio = snap.prune_ratio;
  s.params = snap.params;
  s.mask = snap.mask;
  s.adam = snap.adam;
  s.history = history;
  s.rng["batching"] = snap.batching;
  s.rng["noise"] = snap.noise;
  return s;
}

Snapshot snapshot_from_checkpoint(const CheckpointState& s) {
  Snapshot snap;
  snap.iter = s.iter;
  snap.prune_ratio = s.prune_ratio;
  snap.params = s.params;
  snap.mask = s.mask;
  snap.adam = s.adam;
  if (s.rng.count("batching")) snap.batching = s.rng.at("batching");
  if (s.rng.count("noise")) snap.noise = s.rng.at("noise");
  return snap;
}

}  // namespace sparseflow
