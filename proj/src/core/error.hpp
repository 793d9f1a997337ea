#pragma once

#include <stdexcept>
#include <string>

namespace fraglow {

// Stable error categories; the C API and CLI exit codes map onto these.
enum class Errc {
    Config = 2,
    Runtime = 3,
    Bind = 4,
    CheckFailed = 5,
    Shape = 10,
    Dtype = 11,
    UnknownInput = 12,
    UnknownNode = 13,
    DuplicateTag = 14,
    InvalidResource = 15,
    EmptyFragment = 16,
    MissingLabel = 17,
    InsufficientSlots = 18,
    PolicyInapplicable = 19,
    NotReplicable = 20,
    HeterogeneousGroup = 21,
    OutOfRangeAction = 22,
    SteppingDoneEnv = 23,
    UnknownEnv = 24,
    EmptyBuffer = 25,
    DegenerateBatch = 26,
    EmptyTrajectory = 27,
    WorkerUnreachable = 28,
    LoadRejected = 29,
    WorkerFailure = 30,
    Timeout = 31,
    TagMismatch = 32,
    PeerFailure = 33,
};

class Error : public std::runtime_error {
  public:
    Error(Errc code, std::string msg) : std::runtime_error(std::move(msg)), code_(code) {}
    Errc code() const { return code_; }

  private:
    Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& msg) { throw Error(code, msg); }

inline const char* errc_name(Errc c) {
    switch (c) {
        case Errc::Config: return "ConfigError";
        case Errc::Runtime: return "RuntimeError";
        case Errc::Bind: return "BindError";
        case Errc::CheckFailed: return "CheckFailed";
        case Errc::Shape: return "ShapeError";
        case Errc::Dtype: return "DtypeError";
        case Errc::UnknownInput: return "UnknownInput";
        case Errc::UnknownNode: return "UnknownNode";
        case Errc::DuplicateTag: return "DuplicateTag";
        case Errc::InvalidResource: return "InvalidResource";
        case Errc::EmptyFragment: return "EmptyFragment";
        case Errc::MissingLabel: return "MissingLabel";
        case Errc::InsufficientSlots: return "InsufficientSlots";
        case Errc::PolicyInapplicable: return "PolicyInapplicable";
        case Errc::NotReplicable: return "NotReplicable";
        case Errc::HeterogeneousGroup: return "HeterogeneousGroup";
        case Errc::OutOfRangeAction: return "OutOfRangeAction";
        case Errc::SteppingDoneEnv: return "SteppingDoneEnv";
        case Errc::UnknownEnv: return "UnknownEnv";
        case Errc::EmptyBuffer: return "EmptyBuffer";
        case Errc::DegenerateBatch: return "DegenerateBatch";
        case Errc::EmptyTrajectory: return "EmptyTrajectory";
        case Errc::WorkerUnreachable: return "WorkerUnreachable";
        case Errc::LoadRejected: return "LoadRejected";
        case Errc::WorkerFailure: return "WorkerFailure";
        case Errc::Timeout: return "Timeout";
        case Errc::TagMismatch: return "TagMismatch";
        case Errc::PeerFailure: return "PeerFailure";
    }
    return "Error";
}

}  // namespace fraglow
