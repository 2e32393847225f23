#include "flexireg/encoders.hpp"

#include <cmath>
#include <cstdlib>
#include <sstream>
#include <stdexcept>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "flexireg/ingest.hpp"
#include "flexireg/rng.hpp"

namespace flexireg {

std::string modality_name(Modality m) {
  switch (m) {
    case Modality::kSatellite: return "satellite";
    case Modality::kStreetview: return "streetview";
    case Modality::kText: return "text";
  }
  return "?";
}

int default_dim(Modality m) {
  switch (m) {
    case Modality::kSatellite: return 512;
    case Modality::kStreetview: return 768;
    case Modality::kText: return 4096;
  }
  return 0;
}

namespace {

Eigen::VectorXd expand_unit(std::uint64_t key, int dim) {
  Rng rng(key);
  Eigen::VectorXd v(dim);
  for (int i = 0; i < dim; ++i) v(i) = rng.normal();
  const double n = v.norm();
  return n > 0.0 ? Eigen::VectorXd(v / n) : v;
}

// "k=v" numeric fields from a structured ref token; cell ids and raw
// coordinates are identifiers, not signal, and are skipped.
std::vector<std::pair<std::string, double>> parse_ref_fields(const std::string& item) {
  std::vector<std::pair<std::string, double>> fields;
  std::string body = item;
  const auto colon = body.find(':');
  if (colon != std::string::npos) body = body.substr(colon + 1);
  std::istringstream is(body);
  std::string field;
  while (std::getline(is, field, ';')) {
    const auto eq = field.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = field.substr(0, eq);
    if (key == "cell" || key == "x" || key == "y" || key == "h") continue;
    const std::string val = field.substr(eq + 1);
    char* end = nullptr;
    const double v = std::strtod(val.c_str(), &end);
    if (end == val.c_str() || *end != '\0') continue;
    fields.emplace_back(key, v);
  }
  return fields;
}

// "<count> <category name>" phrases from a description text.
std::vector<std::pair<std::string, double>> parse_text_fields(const std::string& text) {
  std::vector<std::pair<std::string, double>> fields;
  constexpr double kCountScale = 0.05;
  for (int k = 0; k < kPoiCategories; ++k) {
    const std::string& name = poi_category_names()[static_cast<std::size_t>(k)];
    const auto pos = text.find(name);
    if (pos == std::string::npos) continue;
    // nearest integer token before the category name
    auto end = text.find_last_not_of(' ', pos == 0 ? 0 : pos - 1);
    if (end == std::string::npos) continue;
    auto start = text.find_last_of(' ', end);
    const std::string tok =
        text.substr(start == std::string::npos ? 0 : start + 1,
                    end - (start == std::string::npos ? 0 : start + 1) + 1);
    char* endp = nullptr;
    const double v = std::strtod(tok.c_str(), &endp);
    if (endp == tok.c_str()) continue;
    fields.emplace_back("poi" + std::to_string(k), v * kCountScale);
  }
  return fields;
}

}  // namespace

StubProvider::StubProvider(Modality modality, std::uint64_t seed, double signal_scale,
                           TextReduction reduction, int dim)
    : modality_(modality),
      dim_(dim > 0 ? dim : default_dim(modality)),
      seed_(seed),
      signal_scale_(signal_scale),
      reduction_(reduction) {
  if (dim_ <= 0) throw std::invalid_argument("provider dimension must be positive");
}

Eigen::VectorXd StubProvider::encode_one(const std::string& item) const {
  const std::string mod = modality_name(modality_);
  Eigen::VectorXd noise;
  if (modality_ == Modality::kText) {
    // tokenize; last-token or mean-of-token expansion
    std::istringstream is(item);
    std::vector<std::string> tokens;
    std::string tok;
    while (is >> tok) tokens.push_back(tok);
    if (tokens.empty()) tokens.push_back("");
    if (reduction_ == TextReduction::kLastToken) {
      noise = expand_unit(fnv1a64(mod + "|" + std::to_string(seed_) + "|tok|" + tokens.back()), dim_);
    } else {
      noise = Eigen::VectorXd::Zero(dim_);
      for (const auto& t : tokens)
        noise += expand_unit(fnv1a64(mod + "|" + std::to_string(seed_) + "|tok|" + t), dim_);
      noise /= static_cast<double>(tokens.size());
    }
  } else {
    noise = expand_unit(fnv1a64(mod + "|" + std::to_string(seed_) + "|" + item), dim_);
  }

  const auto fields = modality_ == Modality::kText ? parse_text_fields(item)
                                                   : parse_ref_fields(item);
  Eigen::VectorXd sem = Eigen::VectorXd::Zero(dim_);
  for (const auto& [key, value] : fields)
    sem += value * expand_unit(fnv1a64(mod + "|" + std::to_string(seed_) + "|dir|" + key), dim_);

  Eigen::VectorXd out = noise + signal_scale_ * sem;
  const double n = out.norm();
  if (n > 0.0) out /= n;
  return out;
}

Eigen::MatrixXd StubProvider::encode_batch(const std::vector<std::string>& items) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(items.size()), dim_);
  for (std::size_t i = 0; i < items.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = encode_one(items[i]).transpose();
  return out;
}

RemoteProvider::RemoteProvider(Modality modality, std::string endpoint,
                               TextReduction reduction, int timeout_seconds,
                               int max_retries)
    : modality_(modality),
      dim_(default_dim(modality)),
      reduction_(reduction),
      timeout_seconds_(timeout_seconds),
      max_retries_(max_retries) {
  std::string e = endpoint;
  const std::string scheme = "http://";
  if (e.rfind(scheme, 0) == 0) e = e.substr(scheme.size());
  const auto colon = e.find(':');
  if (colon == std::string::npos)
    throw std::invalid_argument("endpoint must be http://host:port");
  host_ = e.substr(0, colon);
  port_ = std::stoi(e.substr(colon + 1));
}

RemoteProvider::~RemoteProvider() = default;

Eigen::MatrixXd RemoteProvider::encode_batch(const std::vector<std::string>& items) {
  nlohmann::json req;
  req["modality"] = modality_name(modality_);
  req["reduction"] = reduction_ == TextReduction::kLastToken ? "last_token" : "mean_tokens";
  req["items"] = items;
  const std::string body = req.dump();

  std::string err;
  for (int attempt = 0; attempt <= max_retries_; ++attempt) {
    httplib::Client cli(host_, port_);
    cli.set_connection_timeout(timeout_seconds_);
    cli.set_read_timeout(timeout_seconds_);
    auto res = cli.Post("/encode", body, "application/json");
    if (!res) {
      err = "transport error: " + httplib::to_string(res.error());
      continue;  // retryable
    }
    if (res->status != 200) {
      err = "HTTP " + std::to_string(res->status);
      continue;
    }
    nlohmann::json resp = nlohmann::json::parse(res->body);
    const int dim = resp.at("dim").get<int>();
    if (dim != dim_)
      throw std::runtime_error("encoder protocol error: expected dim " +
                               std::to_string(dim_) + ", got " + std::to_string(dim));
    const auto& emb = resp.at("embeddings");
    if (emb.size() != items.size())
      throw std::runtime_error("encoder protocol error: row count mismatch");
    Eigen::MatrixXd out(static_cast<Eigen::Index>(items.size()), dim_);
    for (std::size_t i = 0; i < items.size(); ++i) {
      const auto& row = emb[i];
      if (row.size() != static_cast<std::size_t>(dim_))
        throw std::runtime_error("encoder protocol error: ragged embedding row");
      for (int jcol = 0; jcol < dim_; ++jcol)
        out(static_cast<Eigen::Index>(i), jcol) = row[static_cast<std::size_t>(jcol)].get<double>();
    }
    if (!out.allFinite())
      throw std::runtime_error("encoder protocol error: non-finite embedding");
    return out;
  }
  throw std::runtime_error("encoder unavailable after " + std::to_string(max_retries_ + 1) +
                           " attempts: " + err);
}

ProviderBundle make_providers(const std::string& provider, std::uint64_t seed,
                              double stub_signal, const std::string& endpoint,
                              TextReduction text_reduction, int sat_dim, int sv_dim,
                              int text_dim) {
  ProviderBundle b;
  if (provider == "stub") {
    b.satellite = std::make_unique<StubProvider>(Modality::kSatellite, seed, stub_signal,
                                                 text_reduction, sat_dim);
    b.streetview = std::make_unique<StubProvider>(Modality::kStreetview, seed, stub_signal,
                                                  text_reduction, sv_dim);
    b.text = std::make_unique<StubProvider>(Modality::kText, seed, stub_signal,
                                            text_reduction, text_dim);
  } else if (provider == "remote") {
    b.satellite = std::make_unique<RemoteProvider>(Modality::kSatellite, endpoint);
    b.streetview = std::make_unique<RemoteProvider>(Modality::kStreetview, endpoint);
    b.text = std::make_unique<RemoteProvider>(Modality::kText, endpoint, text_reduction);
  } else {
    throw std::invalid_argument("unknown provider: " + provider);
  }
  return b;
}

}  // namespace flexireg
