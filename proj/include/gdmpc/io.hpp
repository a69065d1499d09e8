#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "gdmpc/expert.hpp"
#include "gdmpc/net.hpp"
#include "gdmpc/trainer.hpp"

namespace gdmpc::io {

// Matrices travel inside JSON documents as base64 of raw little-endian
// 64-bit floats, which keeps round trips bit-exact.
std::string base64_encode_doubles(const std::vector<double>& values);
std::vector<double> base64_decode_doubles(const std::string& encoded);

// FNV-1a 64-bit content digest, hex encoded. Integrity checking only.
std::string digest_hex(std::string_view bytes);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view contents);
std::string file_digest(const std::string& path);

struct Dataset {
  NetworkConfig config;
  std::string config_hash;  // hash of the full experiment config
  std::vector<NetworkState> networks;
};

void save_dataset(const Dataset& dataset, const std::string& path);
Dataset load_dataset(const std::string& path);

struct BufferSet {
  std::string config_hash;
  double f_min = 0.0;  // the value the expert stage actually enforced
  std::vector<ExpertBuffer> buffers;
};

void save_buffers(const BufferSet& buffers, const std::string& path);
BufferSet load_buffers(const std::string& path);

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

std::string trace_to_csv(const std::vector<TraceRow>& trace);
std::string rollout_to_csv(const RolloutReport& report);

}  // namespace gdmpc::io
