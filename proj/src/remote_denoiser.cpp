#include "freediff/remote_denoiser.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cmath>

#include "freediff/error.hpp"
#include "httplib.h"
#include "json.hpp"

namespace freediff {
namespace {

using nlohmann::json;

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string path;    // base path without trailing slash
};

Endpoint split_endpoint(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos || url.substr(0, scheme_end) != "http" ||
      url.size() == scheme_end + 3) {
    throw Error(ErrorKind::Validation, "endpoint must look like http://host:port[/path]",
                "endpoint");
  }
  const auto path_start = url.find('/', scheme_end + 3);
  Endpoint ep;
  ep.origin = url.substr(0, path_start);
  ep.path = path_start == std::string::npos ? "" : url.substr(path_start);
  while (!ep.path.empty() && ep.path.back() == '/') ep.path.pop_back();
  return ep;
}

json condition_json(const Condition& c) {
  switch (c.kind()) {
    case Condition::Kind::Null: return json{{"type", "null"}};
    case Condition::Kind::Text: return json{{"type", "text"}, {"text", c.value()}};
    case Condition::Kind::Pattern: break;
  }
  throw Error(ErrorKind::Unsupported, "the remote backend accepts text or null conditions",
              "condition");
}

std::string member_string(const json& body, const char* field) {
  auto it = body.find(field);
  if (it == body.end() || !it->is_string()) {
    throw Error(ErrorKind::Protocol, std::string("response is missing string field '") + field + "'",
                field);
  }
  return it->get<std::string>();
}

}  // namespace

namespace wire {

std::string encode_f32(std::span<const double> values) {
  std::string raw;
  raw.reserve(values.size() * 4);
  for (double v : values) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
    for (int i = 0; i < 4; ++i) raw.push_back(static_cast<char>((bits >> (8 * i)) & 0xffu));
  }
  std::string out(4 * ((raw.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(raw.data()),
                                static_cast<int>(raw.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::vector<double> decode_f32(std::string_view b64, std::size_t expected_count,
                               const std::string& field) {
  if (b64.size() % 4 != 0) {
    throw Error(ErrorKind::Protocol, "malformed base64 in '" + field + "' (length)", field);
  }
  std::string raw(b64.size() / 4 * 3, '\0');
  const int n = b64.empty() ? 0
                            : EVP_DecodeBlock(reinterpret_cast<unsigned char*>(raw.data()),
                                              reinterpret_cast<const unsigned char*>(b64.data()),
                                              static_cast<int>(b64.size()));
  if (n < 0) throw Error(ErrorKind::Protocol, "malformed base64 in '" + field + "'", field);
  // EVP_DecodeBlock keeps the zero bytes produced by '=' padding.
  std::size_t len = static_cast<std::size_t>(n);
  if (!b64.empty() && b64.back() == '=') --len;
  if (b64.size() >= 2 && b64[b64.size() - 2] == '=') --len;
  if (len != expected_count * 4) {
    throw Error(ErrorKind::Protocol,
                "'" + field + "' carries " + std::to_string(len) + " bytes, expected " +
                    std::to_string(expected_count * 4),
                field);
  }
  std::vector<double> values(expected_count);
  for (std::size_t i = 0; i < expected_count; ++i) {
    std::uint32_t bits = 0;
    for (int k = 0; k < 4; ++k) {
      bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(raw[4 * i + k])) << (8 * k);
    }
    const float f = std::bit_cast<float>(bits);
    if (!std::isfinite(f)) {
      throw Error(ErrorKind::Protocol, "'" + field + "' holds a non-finite value", field);
    }
    values[i] = f;
  }
  return values;
}

}  // namespace wire

void RemoteDenoiserConfig::validate() const {
  if (!(timeout_seconds > 0.0)) {
    throw Error(ErrorKind::Validation, "timeout must be positive", "timeout");
  }
  if (shape.size() == 0) throw Error(ErrorKind::Validation, "latent shape must be set", "shape");
  split_endpoint(endpoint);
}

EpsilonPair remote_epsilon(const RemoteDenoiserConfig& config, const LatentTensor& x, int t,
                           const Condition& c) {
  config.validate();
  if (x.shape() != config.shape) {
    throw Error(ErrorKind::Shape, "latent " + x.shape().str() + " does not match the remote contract " +
                                      config.shape.str());
  }
  const Endpoint ep = split_endpoint(config.endpoint);
  const json request{{"t", t},
                     {"shape", {x.shape().channels, x.shape().height, x.shape().width}},
                     {"latent_b64", wire::encode_f32(x.values())},
                     {"condition", condition_json(c)}};

  httplib::Client client(ep.origin);
  const auto secs = static_cast<time_t>(config.timeout_seconds);
  const auto usecs = static_cast<time_t>((config.timeout_seconds - static_cast<double>(secs)) * 1e6);
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);

  auto res = client.Post(ep.path + "/epsilon", request.dump(), "application/json");
  if (!res) {
    throw Error(ErrorKind::Transport, "remote denoiser request failed: " + httplib::to_string(res.error()),
                "endpoint");
  }
  if (res->status >= 400) {
    std::string detail = res->body;
    if (auto body = json::parse(res->body, nullptr, false); body.is_object() && body.contains("error") &&
                                                            body["error"].is_string()) {
      detail = body["error"].get<std::string>();
    }
    throw Error(ErrorKind::Remote,
                "remote denoiser returned HTTP " + std::to_string(res->status) + ": " + detail);
  }
  const json body = json::parse(res->body, nullptr, false);
  if (!body.is_object()) throw Error(ErrorKind::Protocol, "response is not a JSON object", "body");
  const std::size_t n = x.shape().size();
  auto uncond = wire::decode_f32(member_string(body, "eps_uncond_b64"), n, "eps_uncond_b64");
  auto cond = wire::decode_f32(member_string(body, "eps_cond_b64"), n, "eps_cond_b64");
  return {LatentTensor(x.shape(), std::move(uncond)), LatentTensor(x.shape(), std::move(cond))};
}

RemoteDenoiser::RemoteDenoiser(RemoteDenoiserConfig config) : config_(std::move(config)) {
  config_.validate();
}

LatentTensor RemoteDenoiser::epsilon(const LatentTensor& x, int t, const Condition& c) const {
  auto pair = remote_epsilon(config_, x, t, c);
  return c.is_null() ? std::move(pair.uncond) : std::move(pair.cond);
}

EpsilonPair RemoteDenoiser::epsilon_pair(const LatentTensor& x, int t, const Condition& c) const {
  return remote_epsilon(config_, x, t, c);
}

}  // namespace freediff
