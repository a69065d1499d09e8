#include "gdmpc/io.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "gdmpc/config.hpp"

namespace gdmpc::io {

namespace {

using nlohmann::json;

constexpr char kB64Chars[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

std::string base64_encode_bytes(const unsigned char* bytes, std::size_t n) {
  std::string out;
  out.reserve((n + 2) / 3 * 4);
  for (std::size_t i = 0; i < n; i += 3) {
    const unsigned b0 = bytes[i];
    const unsigned b1 = i + 1 < n ? bytes[i + 1] : 0;
    const unsigned b2 = i + 2 < n ? bytes[i + 2] : 0;
    out.push_back(kB64Chars[b0 >> 2]);
    out.push_back(kB64Chars[((b0 & 0x3) << 4) | (b1 >> 4)]);
    out.push_back(i + 1 < n ? kB64Chars[((b1 & 0xf) << 2) | (b2 >> 6)] : '=');
    out.push_back(i + 2 < n ? kB64Chars[b2 & 0x3f] : '=');
  }
  return out;
}

std::vector<unsigned char> base64_decode_bytes(const std::string& s) {
  auto val = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    if (c == '=') return -1;
    throw IntegrityError("invalid base64 character");
  };
  if (s.size() % 4 != 0) throw IntegrityError("base64 length not a multiple of 4");
  std::vector<unsigned char> out;
  out.reserve(s.size() / 4 * 3);
  for (std::size_t i = 0; i < s.size(); i += 4) {
    const int v0 = val(s[i]), v1 = val(s[i + 1]), v2 = val(s[i + 2]), v3 = val(s[i + 3]);
    if (v0 < 0 || v1 < 0) throw IntegrityError("malformed base64 block");
    out.push_back(static_cast<unsigned char>((v0 << 2) | (v1 >> 4)));
    if (v2 >= 0) out.push_back(static_cast<unsigned char>(((v1 & 0xf) << 4) | (v2 >> 2)));
    if (v3 >= 0) {
      if (v2 < 0) throw IntegrityError("malformed base64 padding");
      out.push_back(static_cast<unsigned char>(((v2 & 0x3) << 6) | v3));
    }
  }
  return out;
}

Tensor tensor_from_json(const json& j, std::vector<std::size_t> shape) {
  auto values = base64_decode_doubles(j.get<std::string>());
  return Tensor(std::move(shape), std::move(values));
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw IntegrityError(msg);
}

json parse_artifact(const std::string& path, const std::string& format) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw IntegrityError(path + ": " + e.what());
  }
  require(j.value("format", "") == format, path + ": expected format '" + format + "'");
  require(j.value("version", 0) == 1, path + ": unsupported version");
  return j;
}

}  // namespace

std::string base64_encode_doubles(const std::vector<double>& values) {
  return base64_encode_bytes(reinterpret_cast<const unsigned char*>(values.data()),
                             values.size() * sizeof(double));
}

std::vector<double> base64_decode_doubles(const std::string& encoded) {
  const auto bytes = base64_decode_bytes(encoded);
  if (bytes.size() % sizeof(double) != 0) throw IntegrityError("payload is not a double array");
  std::vector<double> out(bytes.size() / sizeof(double));
  std::memcpy(out.data(), bytes.data(), bytes.size());
  return out;
}

std::string digest_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, std::string_view contents) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path);
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
}

std::string file_digest(const std::string& path) { return digest_hex(read_file(path)); }

void save_dataset(const Dataset& dataset, const std::string& path) {
  json nets = json::array();
  for (const auto& net : dataset.networks) {
    std::vector<double> tx, rx;
    for (const auto& p : net.tx_pos) {
      tx.push_back(p[0]);
      tx.push_back(p[1]);
    }
    for (const auto& p : net.rx_pos) {
      rx.push_back(p[0]);
      rx.push_back(p[1]);
    }
    nets.push_back({{"id", net.id},
                    {"seed", net.seed},
                    {"n", net.n()},
                    {"tx_pos", base64_encode_doubles(tx)},
                    {"rx_pos", base64_encode_doubles(rx)},
                    {"gains_h", base64_encode_doubles(net.gains.vec())}});
  }
  const json j = {{"format", "gdmpc-dataset"},
                  {"version", 1},
                  {"config_hash", dataset.config_hash},
                  {"network_config", network_config_to_json(dataset.config)},
                  {"networks", nets}};
  write_file(path, j.dump(2) + "\n");
}

Dataset load_dataset(const std::string& path) {
  const json j = parse_artifact(path, "gdmpc-dataset");
  Dataset dataset;
  dataset.config_hash = j.at("config_hash").get<std::string>();
  dataset.config = network_config_from_json(j.at("network_config"));
  for (const auto& nj : j.at("networks")) {
    NetworkState net;
    net.id = nj.at("id").get<std::string>();
    net.seed = nj.at("seed").get<std::uint64_t>();
    const auto n = nj.at("n").get<std::size_t>();
    const auto tx = base64_decode_doubles(nj.at("tx_pos").get<std::string>());
    const auto rx = base64_decode_doubles(nj.at("rx_pos").get<std::string>());
    require(tx.size() == 2 * n && rx.size() == 2 * n, path + ": position size mismatch");
    for (std::size_t i = 0; i < n; ++i) {
      net.tx_pos.push_back({tx[2 * i], tx[2 * i + 1]});
      net.rx_pos.push_back({rx[2 * i], rx[2 * i + 1]});
    }
    net.gains = tensor_from_json(nj.at("gains_h"), {n, n});
    dataset.networks.push_back(std::move(net));
  }
  return dataset;
}

void save_buffers(const BufferSet& buffers, const std::string& path) {
  json arr = json::array();
  for (const auto& b : buffers.buffers) {
    arr.push_back({{"network_id", b.network_id},
                   {"b", b.capacity()},
                   {"n", b.n()},
                   {"samples", base64_encode_doubles(b.samples.vec())},
                   {"final_lambda", base64_encode_doubles(b.final_lambda)},
                   {"running_rates", base64_encode_doubles(b.running_rates)}});
  }
  const json j = {{"format", "gdmpc-buffers"},
                  {"version", 1},
                  {"config_hash", buffers.config_hash},
                  {"f_min", buffers.f_min},
                  {"buffers", arr}};
  write_file(path, j.dump(2) + "\n");
}

BufferSet load_buffers(const std::string& path) {
  const json j = parse_artifact(path, "gdmpc-buffers");
  BufferSet set;
  set.config_hash = j.at("config_hash").get<std::string>();
  set.f_min = j.at("f_min").get<double>();
  for (const auto& bj : j.at("buffers")) {
    ExpertBuffer b;
    b.network_id = bj.at("network_id").get<std::string>();
    const auto cap = bj.at("b").get<std::size_t>();
    const auto n = bj.at("n").get<std::size_t>();
    b.samples = tensor_from_json(bj.at("samples"), {cap, n});
    b.final_lambda = base64_decode_doubles(bj.at("final_lambda").get<std::string>());
    b.running_rates = base64_decode_doubles(bj.at("running_rates").get<std::string>());
    require(b.final_lambda.size() == n && b.running_rates.size() == n,
            path + ": buffer vector size mismatch");
    set.buffers.push_back(std::move(b));
  }
  return set;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path) {
  json manifest = json::array();
  std::size_t offset = 0;
  for (const auto& e : checkpoint.params.entries) {
    manifest.push_back({{"name", e.name}, {"shape", e.tensor.shape()}, {"offset", offset}});
    offset += e.tensor.numel();
  }
  const NoiseSchedule schedule = make_schedule(checkpoint.schedule);
  const json j = {{"format", "gdmpc-checkpoint"},
                  {"version", 1},
                  {"gnn", gnn_config_to_json(checkpoint.params.config)},
                  {"schedule", schedule_config_to_json(checkpoint.schedule)},
                  {"schedule_digest", schedule.digest()},
                  {"train", train_config_to_json(checkpoint.train)},
                  {"epoch", checkpoint.epoch},
                  {"val_p5", checkpoint.val_p5},
                  {"val_mean_rate", checkpoint.val_mean_rate},
                  {"val_satisfaction", checkpoint.val_satisfaction},
                  {"train_seed", checkpoint.train_seed},
                  {"param_manifest", manifest},
                  {"params", base64_encode_doubles(checkpoint.params.flatten())}};
  write_file(path, j.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::string& path) {
  const json j = parse_artifact(path, "gdmpc-checkpoint");
  Checkpoint c;
  c.schedule = schedule_config_from_json(j.at("schedule"));
  // Derived schedule arrays are recomputed; the stored digest guards against
  // mismatched schedule code or corrupted headers.
  const NoiseSchedule schedule = make_schedule(c.schedule);
  require(schedule.digest() == j.at("schedule_digest").get<std::uint64_t>(),
          path + ": schedule digest mismatch");
  c.train = train_config_from_json(j.at("train"));
  c.epoch = j.at("epoch").get<std::size_t>();
  c.val_p5 = j.at("val_p5").get<double>();
  c.val_mean_rate = j.at("val_mean_rate").get<double>();
  c.val_satisfaction = j.at("val_satisfaction").get<double>();
  c.train_seed = j.at("train_seed").get<std::uint64_t>();

  const GnnConfig gnn = gnn_config_from_json(j.at("gnn"));
  c.params = GnnParams::init(gnn, 0);
  const auto flat = base64_decode_doubles(j.at("params").get<std::string>());
  require(flat.size() == c.params.count(), path + ": parameter payload size mismatch");
  std::size_t at = 0;
  for (const auto& m : j.at("param_manifest")) {
    require(m.at("name").get<std::string>() == c.params.entries[at].name,
            path + ": parameter manifest mismatch");
    require(m.at("shape").get<std::vector<std::size_t>>() ==
                c.params.entries[at].tensor.shape(),
            path + ": parameter shape mismatch");
    ++at;
  }
  require(at == c.params.entries.size(), path + ": parameter manifest length mismatch");
  c.params.unflatten(flat);
  return c;
}

std::string trace_to_csv(const std::vector<TraceRow>& trace) {
  std::string csv = "epoch,loss,lr,val_mean_rate,val_p5,val_feas_frac\n";
  char line[256];
  for (const auto& r : trace) {
    if (r.validated)
      std::snprintf(line, sizeof line, "%zu,%.10g,%.10g,%.10g,%.10g,%.10g\n", r.epoch, r.loss,
                    r.lr, r.val_mean_rate, r.val_p5, r.val_satisfaction);
    else
      std::snprintf(line, sizeof line, "%zu,%.10g,%.10g,,,\n", r.epoch, r.loss, r.lr);
    csv += line;
  }
  return csv;
}

std::string rollout_to_csv(const RolloutReport& report) {
  std::string csv = "step,receiver,running_rate\n";
  char line[96];
  for (std::size_t t = 0; t < report.steps(); ++t) {
    for (std::size_t i = 0; i < report.n(); ++i) {
      std::snprintf(line, sizeof line, "%zu,%zu,%.10g\n", t, i, report.running_rates.at(t, i));
      csv += line;
    }
  }
  return csv;
}

}  // namespace gdmpc::io
