#include <doctest.h>

#include <sparseflow/checkpoint.hpp>
#include <sparseflow/cnf.hpp>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace sparseflow;
namespace fs = std::filesystem;

namespace {

CheckpointState sample_state() {
  CheckpointState s;
  s.spec = MlpSpec::for_dimension(2, {16}, Activation::tanh);
  s.params = mlp_init(s.spec, 4);
  s.params[3] = 1.0 / 3.0;
  s.params[5] = -0.0;
  s.params[7] = 1e-310;  // subnormal
  s.mask = Mask::ones(static_cast<std::size_t>(s.params.size()));
  s.mask.set(2, false);
  s.params[2] = 0.0;
  s.adam = AdamState::zeros(s.params.size());
  s.adam.m.setConstant(0.125);
  s.adam.v = s.params.cwiseAbs2();
  s.adam.step = 17;
  s.iter = 3;
  s.prune_ratio = 0.271;
  s.history.records.push_back({0, 0.0, 80, 1.1, 1.2, 1.3, 100, 0.0});
  s.history.records.push_back({3, 0.271, 60, 1.0 / 7.0, 1.2, 1.3, 90, 0.0});
  s.rng["batching"] = Rng(1).state();
  s.rng["noise"] = Rng(2).state();
  s.config_json = R"({"train": {"lr": 0.005}})";
  return s;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void dump(const fs::path& p, const std::string& s) {
  std::ofstream(p, std::ios::binary | std::ios::trunc) << s;
}

struct TempDir {
  fs::path path = fs::temp_directory_path() / "sparseflow_test_ckpt";
  TempDir() { fs::create_directories(path); }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("round trip is bit-exact") {
  TempDir d;
  const CheckpointState s = sample_state();
  const std::string hash = save_checkpoint(s, d.path / "a.ckpt");
  CHECK(hash.size() == 64);
  CHECK(checkpoint_hash(d.path / "a.ckpt") == hash);
  const CheckpointState b = load_checkpoint(d.path / "a.ckpt");
  REQUIRE(b.params.size() == s.params.size());
  CHECK(std::memcmp(b.params.data(), s.params.data(), sizeof(double) * static_cast<std::size_t>(s.params.size())) == 0);
  CHECK(std::signbit(b.params[5]));
  CHECK(b.mask == s.mask);
  CHECK(b.adam.m == s.adam.m);
  CHECK(b.adam.v == s.adam.v);
  CHECK(b.adam.step == 17);
  CHECK(b.spec == s.spec);
  CHECK(b.iter == 3);
  CHECK(b.prune_ratio == 0.271);
  CHECK(b.history.records[1].train_nll == 1.0 / 7.0);
  CHECK(b.rng.at("noise") == s.rng.at("noise"));

  const Eigen::Vector2d z(0.3, -0.4);
  const Eigen::VectorXd f0 = mlp_forward(s.spec, apply_mask(s.params, s.mask), z, 0.5);
  const Eigen::VectorXd f1 = mlp_forward(b.spec, apply_mask(b.params, b.mask), z, 0.5);
  CHECK(std::memcmp(f0.data(), f1.data(), sizeof(double) * 2) == 0);

  save_checkpoint(b, d.path / "b.ckpt");
  CHECK(slurp(d.path / "a.ckpt") == slurp(d.path / "b.ckpt"));
}

TEST_CASE("tampering, truncation, version and absence are distinct errors") {
  TempDir d;
  const fs::path p = d.path / "a.ckpt";
  save_checkpoint(sample_state(), p);
  const std::string good = slurp(p);

  std::string bad = good;
  bad[bad.size() - 9] ^= 0x01;
  dump(p, bad);
  CHECK_THROWS_AS(load_checkpoint(p), CheckpointHashMismatch);

  bad = good;
  const auto pos = bad.find("\"iter\":3");
  REQUIRE(pos != std::string::npos);
  bad[pos + 7] = '4';
  dump(p, bad);
  CHECK_THROWS_AS(load_checkpoint(p), CheckpointHashMismatch);

  dump(p, good.substr(0, good.size() - 8));
  CHECK_THROWS_AS(load_checkpoint(p), CheckpointTruncated);
  dump(p, good.substr(0, 30));
  CHECK_THROWS_AS(load_checkpoint(p), CheckpointTruncated);

  bad = good;
  const auto vpos = bad.find("\"format_version\":1");
  REQUIRE(vpos != std::string::npos);
  bad[vpos + 17] = '2';
  dump(p, bad);
  CHECK_THROWS_AS(load_checkpoint(p), CheckpointVersionMismatch);

  dump(p, "hello, this is not a checkpoint at all");
  CHECK_THROWS_AS(load_checkpoint(p), CheckpointError);

  CHECK_THROWS_AS(load_checkpoint(d.path / "missing.ckpt"), CheckpointNotFound);
}

TEST_CASE("snapshot conversion") {
  const CheckpointState s = sample_state();
  const Snapshot snap = snapshot_from_checkpoint(s);
  CHECK(snap.params == s.params);
  CHECK(snap.noise == s.rng.at("noise"));
  const CheckpointState back = checkpoint_from_snapshot(snap, s.history, s.spec, "flow", s.config_json);
  CHECK(back.rng.at("batching") == s.rng.at("batching"));
  CHECK(back.iter == s.iter);
}

TEST_CASE("sha256 of a known message") {
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}
