#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace flexireg {

enum class Modality { kSatellite, kStreetview, kText };

enum class TextReduction { kLastToken, kMeanTokens };

std::string modality_name(Modality m);

// Frozen embedding source. Outputs are deterministic per input and carry a
// fixed dimension per modality: satellite 512 (pre-projection), street view
// 768, text 4096. No training signal crosses this boundary.
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual Modality modality() const = 0;
  virtual int output_dim() const = 0;
  // Row order matches input order.
  virtual Eigen::MatrixXd encode_batch(const std::vector<std::string>& items) = 0;
};

int default_dim(Modality m);  // 512 / 768 / 4096

// Offline deterministic provider: unit-normalized splitmix expansion keyed
// by a 64-bit hash of the item, plus a low-rank component built from
// structured fields ("key=value" pairs in refs, or "<count> <category>"
// phrases in description text) so that similar inputs get correlated rows.
class StubProvider : public EmbeddingProvider {
 public:
  StubProvider(Modality modality, std::uint64_t seed, double signal_scale = 1.0,
               TextReduction reduction = TextReduction::kLastToken, int dim = 0);
  Modality modality() const override { return modality_; }
  int output_dim() const override { return dim_; }
  Eigen::MatrixXd encode_batch(const std::vector<std::string>& items) override;
  Eigen::VectorXd encode_one(const std::string& item) const;

 private:
  Modality modality_;
  int dim_;
  std::uint64_t seed_;
  double signal_scale_;
  TextReduction reduction_;
};

// Client for the HTTP wire protocol:
//   POST /encode  {"modality": str, "reduction": str, "items": [str]}
//   -> {"dim": int, "embeddings": [[float]]}
// Retries transport failures; a response dimension mismatch is a protocol
// error and is not retried.
class RemoteProvider : public EmbeddingProvider {
 public:
  RemoteProvider(Modality modality, std::string endpoint,
                 TextReduction reduction = TextReduction::kLastToken,
                 int timeout_seconds = 30, int max_retries = 3);
  ~RemoteProvider() override;
  Modality modality() const override { return modality_; }
  int output_dim() const override { return dim_; }
  Eigen::MatrixXd encode_batch(const std::vector<std::string>& items) override;

 private:
  Modality modality_;
  int dim_;
  std::string host_;
  int port_;
  TextReduction reduction_;
  int timeout_seconds_;
  int max_retries_;
};

struct ProviderBundle {
  std::unique_ptr<EmbeddingProvider> satellite;
  std::unique_ptr<EmbeddingProvider> streetview;
  std::unique_ptr<EmbeddingProvider> text;
};

// provider = "stub" | "remote"; dims of 0 use the modality defaults
ProviderBundle make_providers(const std::string& provider, std::uint64_t seed,
                              double stub_signal, const std::string& endpoint,
                              TextReduction text_reduction = TextReduction::kLastToken,
                              int sat_dim = 0, int sv_dim = 0, int text_dim = 0);

}  // namespace flexireg
