#pragma once

#include <stdexcept>
#include <string>

namespace fedchain {

enum class Errc {
  DuplicateName,
  InvalidOrg,
  TokenInvalid,
  UnknownProposer,
  IneligiblePeer,
  BadSignature,
  DuplicateEndorsement,
  NotEndorsed,
  ValidationFailed,
  AccessDenied,
  CorruptChain,
  DimensionMismatch,
  EmptyDataset,
  ParseError,
  LabelOutOfRange,
  EmptyForget,
  ShapeMismatch,
  EmptyUpdateSet,
  EpochNotReached,
  NoSubmissions,
  BelowThreshold,
  StaleVersion,
  Divergence,
  CriteriaNotMet,
  ConfigError,
  IoError,
};

inline const char* errc_name(Errc c) {
  switch (c) {
    case Errc::DuplicateName: return "DuplicateName";
    case Errc::InvalidOrg: return "InvalidOrg";
    case Errc::TokenInvalid: return "TokenInvalid";
    case Errc::UnknownProposer: return "UnknownProposer";
    case Errc::IneligiblePeer: return "IneligiblePeer";
    case Errc::BadSignature: return "BadSignature";
    case Errc::DuplicateEndorsement: return "DuplicateEndorsement";
    case Errc::NotEndorsed: return "NotEndorsed";
    case Errc::ValidationFailed: return "ValidationFailed";
    case Errc::AccessDenied: return "AccessDenied";
    case Errc::CorruptChain: return "CorruptChain";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::EmptyDataset: return "EmptyDataset";
    case Errc::ParseError: return "ParseError";
    case Errc::LabelOutOfRange: return "LabelOutOfRange";
    case Errc::EmptyForget: return "EmptyForget";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::EmptyUpdateSet: return "EmptyUpdateSet";
    case Errc::EpochNotReached: return "EpochNotReached";
    case Errc::NoSubmissions: return "NoSubmissions";
    case Errc::BelowThreshold: return "BelowThreshold";
    case Errc::StaleVersion: return "StaleVersion";
    case Errc::Divergence: return "Divergence";
    case Errc::CriteriaNotMet: return "CriteriaNotMet";
    case Errc::ConfigError: return "ConfigError";
    case Errc::IoError: return "IoError";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& msg)
      : std::runtime_error(std::string(errc_name(code)) + ": " + msg), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void raise(Errc code, const std::string& msg) { throw Error(code, msg); }

}  // namespace fedchain
