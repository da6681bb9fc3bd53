#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "freediff/denoiser.hpp"

namespace freediff {

struct RemoteDenoiserConfig {
  /// Base URL, e.g. "http://127.0.0.1:8500" or "http://host/api".
  std::string endpoint;
  double timeout_seconds = 60.0;
  Shape shape;

  void validate() const;
};

/// One POST {endpoint}/epsilon returning both predictions.
EpsilonPair remote_epsilon(const RemoteDenoiserConfig& config, const LatentTensor& x, int t,
                           const Condition& c);

class RemoteDenoiser final : public Denoiser {
 public:
  explicit RemoteDenoiser(RemoteDenoiserConfig config);

  Shape latent_shape() const override { return config_.shape; }
  LatentTensor epsilon(const LatentTensor& x, int t, const Condition& c) const override;
  EpsilonPair epsilon_pair(const LatentTensor& x, int t, const Condition& c) const override;

 private:
  RemoteDenoiserConfig config_;
};

namespace wire {

/// Base64 of little-endian float32 values.
std::string encode_f32(std::span<const double> values);
/// Inverse of encode_f32. Throws Protocol naming `field` on bad base64,
/// wrong length or non-finite values.
std::vector<double> decode_f32(std::string_view b64, std::size_t expected_count,
                               const std::string& field);

}  // namespace wire

}  // namespace freediff
