#pragma once

#include <stdexcept>
#include <string>

namespace stainqc {

/// Base class for all pipeline errors. Subcommands catch this at the top
/// level and turn it into a nonzero exit code.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

#define STAINQC_ERROR(Name)                                                   \
  class Name : public Error {                                                 \
  public:                                                                     \
    using Error::Error;                                                       \
  }

STAINQC_ERROR(IoError);              // unreadable/truncated/unsupported file
STAINQC_ERROR(MetadataError);        // missing mpp or malformed slide metadata
STAINQC_ERROR(BoundsError);          // region outside slide bounds
STAINQC_ERROR(ShapeError);           // tensor/image dimension mismatch
STAINQC_ERROR(ArgumentError);        // invalid operation argument
STAINQC_ERROR(ConfigError);          // run configuration inconsistency
STAINQC_ERROR(StageError);           // checkpoint stage / prerequisite mismatch
STAINQC_ERROR(InvalidLabelError);    // unknown stain class id
STAINQC_ERROR(ProjectionError);      // label not representable in target class set
STAINQC_ERROR(InvalidDistributionError); // probability vector malformed
STAINQC_ERROR(UpsampleRefusedError); // thumbnail target larger than level 0
STAINQC_ERROR(OverrideShapeError);   // manual mask override dims mismatch
STAINQC_ERROR(EmptyBagError);        // aggregation over zero instances
STAINQC_ERROR(LabelError);           // label index outside class count
STAINQC_ERROR(ManifestError);        // slide/label bookkeeping inconsistency

#undef STAINQC_ERROR

} // namespace stainqc
