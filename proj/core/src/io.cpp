#include "flexireg/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>
#include <stdexcept>

#include "flexireg/rng.hpp"

namespace flexireg {
namespace {

static_assert(std::endian::native == std::endian::little,
              "big-endian hosts need byte swapping here");

void put_u32(std::ofstream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), 4);
}

std::uint32_t get_u32(std::ifstream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 4);
  if (!in) throw std::runtime_error("embedding file: truncated header");
  return v;
}

}  // namespace

void write_embedding_file(const std::string& path, const Eigen::MatrixXd& m,
                          const std::vector<std::int64_t>& ids) {
  if (!ids.empty() && static_cast<Eigen::Index>(ids.size()) != m.rows())
    throw std::invalid_argument("write_embedding_file: ids size != rows");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write("FEMB", 4);
  put_u32(out, 1u);
  put_u32(out, static_cast<std::uint32_t>(m.rows()));
  put_u32(out, static_cast<std::uint32_t>(m.cols()));
  std::vector<float> row(m.cols());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) row[j] = static_cast<float>(m(i, j));
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size() * 4));
  }
  if (!out) throw std::runtime_error("short write to " + path);
  out.close();

  nlohmann::json j = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    j.push_back(ids.empty() ? static_cast<std::int64_t>(i) : ids[i]);
  std::ofstream side(path + ".ids.json");
  side << j.dump() << "\n";
}

Eigen::MatrixXd read_embedding_file(const std::string& path,
                                    std::vector<std::int64_t>* ids) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "FEMB", 4) != 0)
    throw std::runtime_error("embedding file: bad magic in " + path);
  const std::uint32_t version = get_u32(in);
  if (version != 1)
    throw std::runtime_error("embedding file: unsupported version " + std::to_string(version));
  const std::uint32_t rows = get_u32(in);
  const std::uint32_t cols = get_u32(in);
  std::vector<float> buf(static_cast<std::size_t>(rows) * cols);
  in.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(buf.size() * 4));
  if (static_cast<std::size_t>(in.gcount()) != buf.size() * 4)
    throw std::runtime_error("embedding file: truncated payload in " + path);
  // reject trailing garbage
  char extra;
  if (in.read(&extra, 1))
    throw std::runtime_error("embedding file: trailing bytes in " + path);

  Eigen::MatrixXd m(rows, cols);
  for (std::uint32_t i = 0; i < rows; ++i)
    for (std::uint32_t j = 0; j < cols; ++j)
      m(i, j) = buf[static_cast<std::size_t>(i) * cols + j];

  if (ids) {
    ids->clear();
    std::ifstream side(path + ".ids.json");
    if (side) {
      nlohmann::json j;
      side >> j;
      for (const auto& v : j) ids->push_back(v.get<std::int64_t>());
    }
  }
  return m;
}

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.precision(17);
  for (std::size_t i = 0; i < header.size(); ++i)
    out << (i ? "," : "") << header[i];
  out << "\n";
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << row[i];
    out << "\n";
  }
}

void write_run_manifest(const std::string& path, const std::string& command,
                        const std::map<std::string, std::string>& config,
                        std::uint64_t config_hash,
                        const std::map<std::string, std::uint64_t>& artifact_hashes) {
  nlohmann::json j;
  j["command"] = command;
  j["config"] = config;
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(config_hash));
  j["config_hash"] = buf;
  nlohmann::json arts = nlohmann::json::object();
  for (const auto& [name, h] : artifact_hashes) {
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    arts[name] = buf;
  }
  j["artifacts"] = arts;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << "\n";
}

std::uint64_t hash_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::uint64_t h = 14695981039346656037ull;
  char buf[65536];
  while (in.read(buf, sizeof buf) || in.gcount() > 0)
    h = fnv1a64(buf, static_cast<std::size_t>(in.gcount()), h);
  return h;
}

}  // namespace flexireg
