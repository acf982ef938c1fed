#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fedchain/crypto.hpp"
#include "fedchain/rng.hpp"

namespace fedchain::identity {

enum class Role { Client, Agent };

inline const char* role_name(Role r) { return r == Role::Client ? "Client" : "Agent"; }

struct EntityRecord {
  std::string name;
  Role role;
  std::string org;
  std::vector<std::uint8_t> public_key;
  std::int64_t registered_at = 0;
};

enum class TokenStatus { Valid, Expired, BadSignature, Malformed };

inline const char* token_status_name(TokenStatus s) {
  switch (s) {
    case TokenStatus::Valid: return "Valid";
    case TokenStatus::Expired: return "Expired";
    case TokenStatus::BadSignature: return "BadSignature";
    case TokenStatus::Malformed: return "Malformed";
  }
  return "Malformed";
}

struct TokenClaims {
  std::string subject;
  std::int64_t issued_at = 0;
  std::int64_t expires_at = 0;
};

// Parses the claims without verifying the signature. Used for display and tests.
std::optional<TokenClaims> peek_claims(std::string_view token);

// Entity registry plus token authority. Secret keys never leave this object;
// callers sign through sign_as and verify against stored public keys.
class Registry {
 public:
  Registry(std::vector<std::string> org_whitelist, std::int64_t token_ttl, std::uint64_t seed);

  // Registers the entity and issues a token. Throws DuplicateName / InvalidOrg.
  std::pair<EntityRecord, std::string> register_entity(const std::string& name, Role role,
                                                       const std::string& org,
                                                       std::int64_t now);

  TokenStatus validate_token(std::string_view token, std::int64_t now) const;

  bool has_entity(const std::string& name) const { return entities_.contains(name); }
  const EntityRecord* find(const std::string& name) const;
  const std::set<std::string>& client_pool() const { return clients_; }
  const std::set<std::string>& agent_pool() const { return agents_; }
  std::size_t entity_count() const { return entities_.size(); }
  std::int64_t token_ttl() const { return ttl_; }

  std::vector<std::uint8_t> sign_as(const std::string& name,
                                    std::span<const std::uint8_t> msg) const;
  bool verify(const std::string& name, std::span<const std::uint8_t> msg,
              std::span<const std::uint8_t> sig) const;

  // Entity list without secret material.
  std::string export_json() const;

 private:
  std::string issue_token(const std::string& subject, std::int64_t now) const;

  std::map<std::string, EntityRecord> entities_;
  std::map<std::string, std::vector<std::uint8_t>> secret_keys_;
  std::set<std::string> clients_;
  std::set<std::string> agents_;
  std::vector<std::string> org_whitelist_;
  std::vector<std::uint8_t> signing_key_;
  std::int64_t ttl_;
  Rng rng_;
};

}  // namespace fedchain::identity
