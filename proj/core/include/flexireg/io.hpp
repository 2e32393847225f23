#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace flexireg {

// Portable embedding/matrix file:
//   magic "FEMB" | u32 version=1 | u32 rows | u32 cols | rows*cols float32
// All integers and floats little-endian. Row ids live in a JSON sidecar
// "<path>.ids.json" mapping row index -> entity id.
void write_embedding_file(const std::string& path, const Eigen::MatrixXd& m,
                          const std::vector<std::int64_t>& ids);
Eigen::MatrixXd read_embedding_file(const std::string& path,
                                    std::vector<std::int64_t>* ids = nullptr);

// CSV loss curve: header then one row per epoch.
void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows);

// Machine-readable run manifest (JSON): config, config hash, input/output
// artifact hashes.
void write_run_manifest(const std::string& path, const std::string& command,
                        const std::map<std::string, std::string>& config,
                        std::uint64_t config_hash,
                        const std::map<std::string, std::uint64_t>& artifact_hashes);

std::uint64_t hash_file(const std::string& path);

}  // namespace flexireg
