#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedchain/rng.hpp"

namespace fedchain::crypto {

using Digest = std::array<std::uint8_t, 32>;

Digest sha256(std::span<const std::uint8_t> data);
Digest sha256(std::string_view data);

Digest hmac_sha256(std::span<const std::uint8_t> key, std::string_view msg);

std::string to_hex(std::span<const std::uint8_t> bytes);
std::string to_hex(const Digest& d);
std::vector<std::uint8_t> from_hex(std::string_view hex);  // throws ParseError

std::string b64url_encode(std::string_view data);
std::string b64url_decode(std::string_view data);  // throws ParseError

struct KeyPair {
  std::vector<std::uint8_t> public_key;  // 32 bytes
  std::vector<std::uint8_t> secret_key;  // 32-byte ed25519 seed
};

// Deterministic keypair: the ed25519 seed is drawn from the caller's RNG.
KeyPair ed25519_keypair(Rng& rng);
std::vector<std::uint8_t> ed25519_sign(std::span<const std::uint8_t> secret,
                                       std::span<const std::uint8_t> msg);
bool ed25519_verify(std::span<const std::uint8_t> public_key,
                    std::span<const std::uint8_t> msg,
                    std::span<const std::uint8_t> sig);

}  // namespace fedchain::crypto
