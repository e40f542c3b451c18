#pragma once

#include <stdexcept>
#include <string>

namespace ginsim {

// Base class for every error the runtime raises. Each condition gets its own
// type so callers (and tests) can catch precisely.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define GINSIM_DEFINE_ERROR(Name)               \
  class Name : public Error {                   \
   public:                                      \
    using Error::Error;                         \
  }

// core
GINSIM_DEFINE_ERROR(InvalidDescriptor);
GINSIM_DEFINE_ERROR(MalformedDescriptor);
GINSIM_DEFINE_ERROR(OutOfBounds);
GINSIM_DEFINE_ERROR(UnknownWindow);
GINSIM_DEFINE_ERROR(RankOutOfRange);

// fabric
GINSIM_DEFINE_ERROR(DuplicateEndpoint);
GINSIM_DEFINE_ERROR(UnknownChannel);
GINSIM_DEFINE_ERROR(MalformedFrame);

// plugin / backends
GINSIM_DEFINE_ERROR(UnknownHandle);
GINSIM_DEFINE_ERROR(BackendMismatch);
GINSIM_DEFINE_ERROR(InvalidContext);

// runtime
GINSIM_DEFINE_ERROR(ConfigMismatch);
GINSIM_DEFINE_ERROR(BootstrapTimeout);
GINSIM_DEFINE_ERROR(RegistrationMismatch);
GINSIM_DEFINE_ERROR(InvalidPeer);
GINSIM_DEFINE_ERROR(InvalidSignal);
GINSIM_DEFINE_ERROR(InvalidCounter);
GINSIM_DEFINE_ERROR(ResetWhileOutstanding);
GINSIM_DEFINE_ERROR(Timeout);

// harness
GINSIM_DEFINE_ERROR(VerificationFailure);
GINSIM_DEFINE_ERROR(FlowControlViolation);
GINSIM_DEFINE_ERROR(ChildFailure);
GINSIM_DEFINE_ERROR(UsageError);

#undef GINSIM_DEFINE_ERROR

}  // namespace ginsim
