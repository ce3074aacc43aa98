#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "sboxsim/machine.hpp"

namespace sboxsim {

enum class ChannelPhase : std::uint8_t {
  Unshared,
  SharePending,
  Accepted,
  Attested,
  Destroyed,
};

const char* channel_phase_name(ChannelPhase p);

// Fixed layout of the handshake words inside the shared page:
// [0,32) initiator digest, [32,64) acceptor digest, [64,72) state word.
inline constexpr std::size_t kDigestAOffset = 0;
inline constexpr std::size_t kDigestBOffset = 32;
inline constexpr std::size_t kStateWordOffset = 64;
inline constexpr std::array<std::uint8_t, 8> kAttestedWord = {
    'a', 't', 't', 'e', 's', 't', 'o', 'k'};

struct ChannelState {
  PhysPage page = 0;
  EnclaveId initiator = 0;
  EnclaveId acceptor = 0;
  VirtPage mapped_va = 0;
  ChannelPhase phase = ChannelPhase::Unshared;
  Digest expected_digest_initiator{};  // what the acceptor expects to see
  Digest expected_digest_acceptor{};   // what the initiator expects to see
};

enum class ChannelErr : std::uint8_t {
  Ok = 0,
  IsaFailure,            // detail carries the instruction error
  AttestationMismatch,   // mismatch_side names who refused
  ChannelNotAttested,
  MarshalOverflow,
  TypeMismatch,
  UnknownFunction,
};

const char* channel_err_name(ChannelErr e);

struct ChannelResult {
  ChannelErr err = ChannelErr::Ok;
  IsaErr isa_detail = IsaErr::Ok;
  std::optional<EnclaveId> mismatch_side;

  bool ok() const { return err == ChannelErr::Ok; }
};

// ---- typed call descriptors (generic stand-in for generated edge calls) ----

enum class ParamType : std::uint8_t { Scalar, FixedBuffer, CountedArray };
enum class ParamDir : std::uint8_t { In, Out, InOut };

struct ParamDesc {
  std::string name;
  ParamType type = ParamType::Scalar;
  ParamDir dir = ParamDir::In;
  std::uint32_t fixed_len = 0;   // FixedBuffer only
  std::uint32_t elem_size = 1;   // CountedArray only
};

struct CallDescriptor {
  std::uint32_t fn = 0;
  std::vector<ParamDesc> params;
};

// Scalars are 64-bit; buffers and counted arrays are byte vectors.
using CallValue = std::variant<std::uint64_t, std::vector<std::uint8_t>>;

using CallHandler = std::function<void(std::vector<CallValue>& params)>;

CallDescriptor call_descriptor_from_json(const std::string& text);

// Orchestrates establishment and calls over one shared EPC page. The two
// cpu ids must already be executing inside the respective enclaves.
class ChannelRuntime {
 public:
  ChannelRuntime(Machine& m, CpuId cpu_initiator, CpuId cpu_acceptor)
      : m_(m), cpu_a_(cpu_initiator), cpu_b_(cpu_acceptor) {}

  // ESADD + ESACCEPT + digest cross-verification. On any digest mismatch
  // the channel is destroyed: page zeroed, co-owner cleared.
  ChannelResult establish(ChannelState& ch);

  void register_handler(std::uint32_t fn, CallHandler handler);

  // Marshal into the shared page, copy the whole frame into callee-private
  // memory, then execute. `after_copy` runs between the copy and the call;
  // mutations of the shared page there must not reach the callee.
  ChannelResult call(ChannelState& ch, const CallDescriptor& desc,
                     std::vector<CallValue>& args,
                     const std::function<void()>& after_copy = {});

  Machine& machine() { return m_; }
  CpuId initiator_cpu() const { return cpu_a_; }
  CpuId acceptor_cpu() const { return cpu_b_; }

 private:
  Machine& m_;
  CpuId cpu_a_;
  CpuId cpu_b_;
  std::map<std::uint32_t, CallHandler> handlers_;
};

// Marshalling helpers, exposed for property tests.
std::optional<std::vector<std::uint8_t>> marshal_frame(
    const CallDescriptor& desc, const std::vector<CallValue>& args,
    ChannelErr& err);
bool demarshal_frame(std::span<const std::uint8_t> frame,
                     const CallDescriptor& desc,
                     std::vector<CallValue>& out_args);

}  // namespace sboxsim
