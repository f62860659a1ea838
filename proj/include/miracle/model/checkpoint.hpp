#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "miracle/model/model.hpp"

namespace miracle::model {

inline constexpr char kCheckpointMagic[8] = {'M', 'I', 'R', 'A', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Layout, little endian:
///   magic[8] | u32 version | u64 header_bytes | JSON header | f64 parameters | u32 CRC-32
/// The CRC covers every byte before it. The header holds the config, codec,
/// history, validation seed, projection checksum and layer shapes; parameters
/// follow in network order (clinical, radiomic, classifier), per layer
/// mu_w, rho_w, mu_b, rho_b, column-major.
std::string serialize_checkpoint(const MiracleModel& model);

/// Wrong magic or CRC is an IntegrityError; another format version is a
/// VersionError, checked before the CRC so old files get a clear message.
MiracleModel deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const MiracleModel& model);
MiracleModel load_checkpoint(const std::filesystem::path& path);

}  // namespace miracle::model
