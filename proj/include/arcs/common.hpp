#pragma once

#include <stdexcept>
#include <string>

namespace arcs {

enum class Errc {
  NonPositiveValue,
  WrongCategory,
  UnknownToken,
  UnknownTopology,
  DisconnectedTopology,
  MissingStart,
  MissingEnd,
  MissingTopology,
  DanglingComponent,
  SpecRegionMalformed,
  UnexpectedToken,
  DoneState,
  IllegalToken,
  AllMasked,
  BadConfig,
  EmptyBatch,
  InvalidSequence,
  ComponentMismatch,
  SimulatorUnavailable,
  ParseFailure,
  GroupTooSmall,
  CheckpointMismatch,
  EmptyEvaluation,
  DegenerateEmbeddings,
  IoError,
};

const char* errc_name(Errc c);

// Thrown on contract violations; carries a machine-readable code.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(errc_name(code) + std::string(": ") + what), code_(code) {}
  Errc code() const { return code_; }

 private:
  Errc code_;
};

}  // namespace arcs
