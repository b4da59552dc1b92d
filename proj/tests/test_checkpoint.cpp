#include <filesystem>
#include <fstream>
#include <cstring>
#include <random>

#include "b3s/checkpoint.hpp"
#include "b3s/config.hpp"
#include "doctest.h"
#include "json.hpp"

using namespace b3s;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("b3s_ckpt_" + name)).string();
}

ParameterStore sample_store() {
  ParameterStore s;
  std::mt19937_64 rng(9);
  init_uniform(s.add("layer.w", {3, 4}), rng, 1.0);
  init_uniform(s.add("layer.b", {1, 4}), rng, 1.0);
  Parameter& odd = s.add("special", {2, 1, 3});
  odd.value.data()[0] = -0.0f;
  odd.value.data()[1] = 1e-40f;  // subnormal
  odd.value.data()[2] = 3.4e38f;
  return s;
}

bool bit_equal(const ParameterStore& a, const ParameterStore& b) {
  if (a.size() != b.size()) return false;
  bool same = true;
  a.for_each([&](const Parameter& p) {
    if (!b.contains(p.name)) {
      same = false;
      return;
    }
    const auto& q = b.get(p.name);
    if (p.value.dims() != q.value.dims()) {
      same = false;
      return;
    }
    same = same && std::memcmp(p.value.data().data(), q.value.data().data(), p.value.size() * sizeof(float)) == 0;
  });
  return same;
}

}  // namespace

TEST_CASE("checkpoint round trip") {
  const ParameterStore s = sample_store();
  const ConfigHash h = config_hash(RunConfig{});
  const auto path = temp_path("rt.bin");
  save_checkpoint(s, h, path);
  const Checkpoint ck = load_checkpoint(path);
  CHECK(bit_equal(s, ck.params));
  CHECK(ck.config_hash == h);
  CHECK(encode_checkpoint(ck.params, ck.config_hash) == encode_checkpoint(s, h));

  SUBCASE("layout") {
    const std::string bytes = encode_checkpoint(s, h);
    CHECK(bytes.substr(0, 4) == "B3SM");
    CHECK(bytes[4] == 1);
    CHECK(bytes[8] == 3);
    // u16 name length then the name
    CHECK(bytes[12] == 7);
    CHECK(bytes.substr(14, 7) == "layer.w");
    CHECK(bytes.size() == 4 + 4 + 4 + (2 + 7 + 1 + 8 + 48) + (2 + 7 + 1 + 8 + 16) + (2 + 7 + 1 + 12 + 24) + 32);
    CHECK(std::memcmp(bytes.data() + bytes.size() - 32, h.data(), 32) == 0);
  }
  SUBCASE("restore into a store") {
    ParameterStore dst;
    dst.add("layer.w", {3, 4});
    dst.add("layer.b", {1, 4});
    dst.add("special", {2, 1, 3});
    restore_into(dst, ck);
    CHECK(bit_equal(dst, s));
    ParameterStore partial;
    partial.add("layer.w", {3, 4});
    CHECK_THROWS_AS(restore_into(partial, ck, true), CheckpointError);
    CHECK_NOTHROW(restore_into(partial, ck, false));
    ParameterStore wrong;
    wrong.add("layer.w", {4, 3});
    CHECK_THROWS_AS(restore_into(wrong, ck, false), CheckpointError);
  }
  std::filesystem::remove(path);
}

TEST_CASE("corrupt checkpoints are rejected") {
  const std::string good = encode_checkpoint(sample_store(), ConfigHash{});
  std::string bad_magic = good;
  bad_magic[0] = 'X';
  CHECK_THROWS_WITH_AS(decode_checkpoint(bad_magic), doctest::Contains("magic"), CheckpointError);
  std::string bad_version = good;
  bad_version[4] = 7;
  CHECK_THROWS_WITH_AS(decode_checkpoint(bad_version), doctest::Contains("version 7"), CheckpointError);
  CHECK_THROWS_WITH_AS(decode_checkpoint(good.substr(0, good.size() - 40)), doctest::Contains("truncated"),
                       CheckpointError);
  CHECK_THROWS_AS(decode_checkpoint(good + "x"), CheckpointError);
  CHECK_THROWS_AS(load_checkpoint(temp_path("missing.bin")), CheckpointError);
}

TEST_CASE("run config") {
  const RunConfig d;
  CHECK(d.hidden_dim == 256);
  CHECK(d.emb_dim == 128);
  CHECK(d.cls_emb_dim == 256);
  CHECK(d.vocab_size == 50000);
  CHECK(d.lr == 0.15);
  CHECK(d.cls_lr == 0.01);
  CHECK(d.clip_norm == 2.0);
  CHECK(d.max_src_len == 400);
  CHECK(d.min_summary_len == 70);
  CHECK(d.coverage_lambda == 1.0);
  CHECK(d.tau == 0.8);
  CHECK(d.beam_size == 4);

  SUBCASE("json round trip and canonical hash") {
    RunConfig c = apply_json(d, R"({"hidden_dim": 64, "tau": 0.5, "decode_mode": "greedy"})");
    CHECK(c.hidden_dim == 64);
    CHECK(c.tau == 0.5);
    CHECK(apply_json(RunConfig{}, to_json(c)) == c);
    CHECK(config_hash(c) == config_hash(apply_json(RunConfig{}, to_json(c))));
    CHECK(config_hash(c) != config_hash(d));
    auto j = nlohmann::json::parse(to_json(c));
    CHECK(j.size() == 26);
  }
  SUBCASE("unknown keys and bad values") {
    CHECK_THROWS_WITH_AS(apply_json(d, R"({"hiden_dim": 64})"), doctest::Contains("hiden_dim"), ConfigError);
    CHECK_THROWS_AS(apply_json(d, R"({"hidden_dim": -1})"), ConfigError);
    CHECK_THROWS_AS(apply_json(d, R"({"hidden_dim": "big"})"), ConfigError);
    CHECK_THROWS_AS(apply_json(d, R"({"decode_mode": "sample"})"), ConfigError);
    CHECK_THROWS_AS(apply_json(d, R"([1, 2])"), ConfigError);
    CHECK_THROWS_AS(apply_json(d, "{"), ConfigError);
  }
  SUBCASE("overrides win over file values") {
    const auto path = temp_path("cfg.json");
    {
      std::ofstream out(path);
      out << R"({"hidden_dim": 32, "lr": 0.5})";
    }
    RunConfig c = load_config(path);
    c = apply_overrides(c, {{"lr", "1.0"}, {"decode_mode", "greedy"}});
    CHECK(c.hidden_dim == 32);
    CHECK(c.lr == 1.0);
    CHECK(c.decode_mode == "greedy");
    CHECK_THROWS_AS(apply_overrides(c, {{"nope", "1"}}), ConfigError);
    std::filesystem::remove(path);
  }
  SUBCASE("module views") {
    const auto t = train_config(d);
    CHECK(t.lr == 0.15);
    CHECK(t.clip_norm == 2.0);
    CHECK(t.batch_size == 16);
    CHECK(decode_config(d).mode == DecodeMode::Beam);
    CHECK(classifier_train_config(d).lr == 0.01);
    CHECK(preprocess_config(d).min_summary_len == 70);
  }
}
