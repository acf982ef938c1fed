#include "fedchain/identity.hpp"

#include <algorithm>

#include <json.hpp>

#include "fedchain/errors.hpp"

namespace fedchain::identity {

using nlohmann::json;

namespace {

std::span<const std::uint8_t> as_bytes(const std::vector<std::uint8_t>& v) {
  return std::span<const std::uint8_t>(v.data(), v.size());
}

}  // namespace

std::optional<TokenClaims> peek_claims(std::string_view token) {
  auto dot1 = token.find('.');
  if (dot1 == std::string_view::npos) return std::nullopt;
  auto dot2 = token.find('.', dot1 + 1);
  if (dot2 == std::string_view::npos) return std::nullopt;
  try {
    std::string payload = crypto::b64url_decode(token.substr(dot1 + 1, dot2 - dot1 - 1));
    json j = json::parse(payload);
    TokenClaims c;
    c.subject = j.at("sub").get<std::string>();
    c.issued_at = j.at("iat").get<std::int64_t>();
    c.expires_at = j.at("exp").get<std::int64_t>();
    return c;
  } catch (...) {
    return std::nullopt;
  }
}

Registry::Registry(std::vector<std::string> org_whitelist, std::int64_t token_ttl,
                   std::uint64_t seed)
    : org_whitelist_(std::move(org_whitelist)), ttl_(token_ttl), rng_(seed) {
  signing_key_.resize(32);
  for (std::size_t i = 0; i < signing_key_.size(); i += 8) {
    std::uint64_t w = rng_.next_u64();
    for (std::size_t j = 0; j < 8; ++j) signing_key_[i + j] = static_cast<std::uint8_t>(w >> (8 * j));
  }
}

std::string Registry::issue_token(const std::string& subject, std::int64_t now) const {
  json header = {{"alg", "HS256"}, {"typ", "JWT"}};
  json payload = {{"sub", subject}, {"iat", now}, {"exp", now + ttl_}};
  std::string signing_input =
      crypto::b64url_encode(header.dump()) + "." + crypto::b64url_encode(payload.dump());
  crypto::Digest mac = crypto::hmac_sha256(as_bytes(signing_key_), signing_input);
  std::string mac_str(reinterpret_cast<const char*>(mac.data()), mac.size());
  return signing_input + "." + crypto::b64url_encode(mac_str);
}

std::pair<EntityRecord, std::string> Registry::register_entity(const std::string& name,
                                                               Role role,
                                                               const std::string& org,
                                                               std::int64_t now) {
  if (name.empty()) raise(Errc::ConfigError, "entity name must be non-empty");
  if (org.empty()) raise(Errc::ConfigError, "org must be non-empty");
  if (std::find(org_whitelist_.begin(), org_whitelist_.end(), org) == org_whitelist_.end()) {
    raise(Errc::InvalidOrg, "org '" + org + "' is not in the scenario whitelist");
  }
  if (entities_.contains(name)) {
    raise(Errc::DuplicateName, "'" + name + "' already existed");
  }
  crypto::KeyPair kp = crypto::ed25519_keypair(rng_);
  EntityRecord rec{name, role, org, kp.public_key, now};
  entities_.emplace(name, rec);
  secret_keys_.emplace(name, std::move(kp.secret_key));
  if (role == Role::Client) {
    clients_.insert(name);
  } else {
    agents_.insert(name);
  }
  return {std::move(rec), issue_token(name, now)};
}

TokenStatus Registry::validate_token(std::string_view token, std::int64_t now) const {
  auto dot1 = token.find('.');
  if (dot1 == std::string_view::npos) return TokenStatus::Malformed;
  auto dot2 = token.find('.', dot1 + 1);
  if (dot2 == std::string_view::npos || token.find('.', dot2 + 1) != std::string_view::npos) {
    return TokenStatus::Malformed;
  }
  std::string signing_input(token.substr(0, dot2));
  std::string mac_claimed;
  json payload;
  try {
    mac_claimed = crypto::b64url_decode(token.substr(dot2 + 1));
    payload = json::parse(crypto::b64url_decode(token.substr(dot1 + 1, dot2 - dot1 - 1)));
  } catch (...) {
    return TokenStatus::Malformed;
  }
  if (!payload.contains("sub") || !payload.contains("exp") || !payload.contains("iat")) {
    return TokenStatus::Malformed;
  }
  crypto::Digest mac = crypto::hmac_sha256(as_bytes(signing_key_), signing_input);
  if (mac_claimed.size() != mac.size() ||
      !std::equal(mac.begin(), mac.end(),
                  reinterpret_cast<const std::uint8_t*>(mac_claimed.data()))) {
    return TokenStatus::BadSignature;
  }
  // Expiry boundary is exclusive: now == exp is already expired.
  if (now >= payload.at("exp").get<std::int64_t>()) return TokenStatus::Expired;
  return TokenStatus::Valid;
}

const EntityRecord* Registry::find(const std::string& name) const {
  auto it = entities_.find(name);
  return it == entities_.end() ? nullptr : &it->second;
}

std::vector<std::uint8_t> Registry::sign_as(const std::string& name,
                                            std::span<const std::uint8_t> msg) const {
  auto it = secret_keys_.find(name);
  if (it == secret_keys_.end()) raise(Errc::UnknownProposer, "no such entity: " + name);
  return crypto::ed25519_sign(as_bytes(it->second), msg);
}

bool Registry::verify(const std::string& name, std::span<const std::uint8_t> msg,
                      std::span<const std::uint8_t> sig) const {
  const EntityRecord* rec = find(name);
  if (rec == nullptr) return false;
  return crypto::ed25519_verify(as_bytes(rec->public_key), msg, sig);
}

std::string Registry::export_json() const {
  json out = json::array();
  for (const auto& [name, rec] : entities_) {
    out.push_back({{"name", rec.name},
                   {"role", role_name(rec.role)},
                   {"org", rec.org},
                   {"public_key", crypto::to_hex(as_bytes(rec.public_key))},
                   {"registered_at", rec.registered_at}});
  }
  return out.dump();
}

}  // namespace fedchain::identity
