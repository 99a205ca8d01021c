#pragma once

#include <stdexcept>
#include <string>

namespace nf {

enum class ErrorKind {
    usage,
    parse,
    shape,
    blob,
    unsupported_kind,
    partition,
    no_feasible_partition,
    infeasible_network,
    capacity,
    map,
    integrity,
    version,
    degenerate_weights,
    empty_calibration,
    dead_layer,
    range,
    io,
};

inline const char* to_string(ErrorKind kind)
{
    switch (kind)
    {
    case ErrorKind::usage: return "UsageError";
    case ErrorKind::parse: return "ParseError";
    case ErrorKind::shape: return "ShapeError";
    case ErrorKind::blob: return "BlobError";
    case ErrorKind::unsupported_kind: return "UnsupportedKind";
    case ErrorKind::partition: return "PartitionError";
    case ErrorKind::no_feasible_partition: return "NoFeasiblePartition";
    case ErrorKind::infeasible_network: return "InfeasibleNetwork";
    case ErrorKind::capacity: return "CapacityError";
    case ErrorKind::map: return "MapError";
    case ErrorKind::integrity: return "IntegrityError";
    case ErrorKind::version: return "VersionError";
    case ErrorKind::degenerate_weights: return "DegenerateWeights";
    case ErrorKind::empty_calibration: return "EmptyCalibration";
    case ErrorKind::dead_layer: return "DeadLayer";
    case ErrorKind::range: return "RangeError";
    case ErrorKind::io: return "IoError";
    }
    return "Error";
}

/// Process exit code for each error class. 0 is success, 1 is reserved for
/// unexpected exceptions.
inline int exit_code(ErrorKind kind)
{
    switch (kind)
    {
    case ErrorKind::usage: return 2;
    case ErrorKind::parse: return 3;
    case ErrorKind::shape:
    case ErrorKind::unsupported_kind: return 4;
    case ErrorKind::blob:
    case ErrorKind::io: return 5;
    case ErrorKind::partition:
    case ErrorKind::no_feasible_partition:
    case ErrorKind::infeasible_network: return 6;
    case ErrorKind::capacity: return 7;
    case ErrorKind::map:
    case ErrorKind::integrity: return 8;
    case ErrorKind::version: return 9;
    case ErrorKind::degenerate_weights:
    case ErrorKind::empty_calibration:
    case ErrorKind::dead_layer:
    case ErrorKind::range: return 10;
    }
    return 1;
}

class Error : public std::runtime_error
{
public:
    Error(ErrorKind kind, const std::string &message)
            : std::runtime_error(std::string(to_string(kind)) + ": " + message)
            , kind_(kind)
    {
    }

    [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

} // namespace nf
