#include "sboxsim/channel.hpp"

#include <cstring>

#include "json.hpp"

namespace sboxsim {

const char* channel_phase_name(ChannelPhase p) {
  switch (p) {
    case ChannelPhase::Unshared: return "Unshared";
    case ChannelPhase::SharePending: return "SharePending";
    case ChannelPhase::Accepted: return "Accepted";
    case ChannelPhase::Attested: return "Attested";
    case ChannelPhase::Destroyed: return "Destroyed";
  }
  return "?";
}

const char* channel_err_name(ChannelErr e) {
  switch (e) {
    case ChannelErr::Ok: return "Ok";
    case ChannelErr::IsaFailure: return "IsaFailure";
    case ChannelErr::AttestationMismatch: return "AttestationMismatch";
    case ChannelErr::ChannelNotAttested: return "ChannelNotAttested";
    case ChannelErr::MarshalOverflow: return "MarshalOverflow";
    case ChannelErr::TypeMismatch: return "TypeMismatch";
    case ChannelErr::UnknownFunction: return "UnknownFunction";
  }
  return "?";
}

ChannelResult ChannelRuntime::establish(ChannelState& ch) {
  ChannelResult res;
  IsaErr e = m_.esadd(cpu_a_, ch.page, ch.acceptor);
  if (e != IsaErr::Ok) {
    res.err = ChannelErr::IsaFailure;
    res.isa_detail = e;
    return res;
  }
  ch.phase = ChannelPhase::SharePending;
  e = m_.esaccept(cpu_b_, ch.page);
  if (e != IsaErr::Ok) {
    res.err = ChannelErr::IsaFailure;
    res.isa_detail = e;
    return res;
  }
  ch.phase = ChannelPhase::Accepted;
  ch.mapped_va = m_.epcm(ch.page).mapped_va;

  // Local attestation: initiator writes first, acceptor answers.
  const Digest& a_digest = m_.find_enclave(ch.initiator)->mrenclave;
  const Digest& b_digest = m_.find_enclave(ch.acceptor)->mrenclave;
  m_.write_bytes(cpu_a_, ch.mapped_va, kDigestAOffset, std::span(a_digest));

  Digest seen_a{};
  m_.read_bytes(cpu_b_, ch.mapped_va, kDigestAOffset, std::span(seen_a));
  if (seen_a != ch.expected_digest_initiator) {
    m_.destroy_share(ch.page);
    ch.phase = ChannelPhase::Destroyed;
    res.err = ChannelErr::AttestationMismatch;
    res.mismatch_side = ch.acceptor;
    return res;
  }
  m_.write_bytes(cpu_b_, ch.mapped_va, kDigestBOffset, std::span(b_digest));

  Digest seen_b{};
  m_.read_bytes(cpu_a_, ch.mapped_va, kDigestBOffset, std::span(seen_b));
  if (seen_b != ch.expected_digest_acceptor) {
    m_.destroy_share(ch.page);
    ch.phase = ChannelPhase::Destroyed;
    res.err = ChannelErr::AttestationMismatch;
    res.mismatch_side = ch.initiator;
    return res;
  }
  m_.write_bytes(cpu_a_, ch.mapped_va, kStateWordOffset,
                 std::span(kAttestedWord));
  ch.phase = ChannelPhase::Attested;
  return res;
}

void ChannelRuntime::register_handler(std::uint32_t fn, CallHandler handler) {
  handlers_[fn] = std::move(handler);
}

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

}  // namespace

std::optional<std::vector<std::uint8_t>> marshal_frame(
    const CallDescriptor& desc, const std::vector<CallValue>& args,
    ChannelErr& err) {
  if (args.size() != desc.params.size()) {
    err = ChannelErr::TypeMismatch;
    return std::nullopt;
  }
  std::vector<std::uint8_t> frame;
  put_u32(frame, desc.fn);
  put_u32(frame, static_cast<std::uint32_t>(desc.params.size()));
  for (std::size_t i = 0; i < desc.params.size(); ++i) {
    const ParamDesc& p = desc.params[i];
    const CallValue& v = args[i];
    if (p.type == ParamType::Scalar) {
      const auto* s = std::get_if<std::uint64_t>(&v);
      if (!s) {
        err = ChannelErr::TypeMismatch;
        return std::nullopt;
      }
      put_u32(frame, 8);
      put_u64(frame, *s);
    } else {
      const auto* b = std::get_if<std::vector<std::uint8_t>>(&v);
      if (!b) {
        err = ChannelErr::TypeMismatch;
        return std::nullopt;
      }
      if (p.type == ParamType::FixedBuffer && b->size() != p.fixed_len) {
        err = ChannelErr::TypeMismatch;
        return std::nullopt;
      }
      if (p.type == ParamType::CountedArray &&
          p.elem_size != 0 && b->size() % p.elem_size != 0) {
        err = ChannelErr::TypeMismatch;
        return std::nullopt;
      }
      put_u32(frame, static_cast<std::uint32_t>(b->size()));
      frame.insert(frame.end(), b->begin(), b->end());
    }
    if (frame.size() > kPageBytes) {
      err = ChannelErr::MarshalOverflow;
      return std::nullopt;
    }
  }
  if (frame.size() > kPageBytes) {
    err = ChannelErr::MarshalOverflow;
    return std::nullopt;
  }
  err = ChannelErr::Ok;
  return frame;
}

bool demarshal_frame(std::span<const std::uint8_t> frame,
                     const CallDescriptor& desc,
                     std::vector<CallValue>& out_args) {
  if (frame.size() < 8) return false;
  if (get_u32(frame.data()) != desc.fn) return false;
  if (get_u32(frame.data() + 4) != desc.params.size()) return false;
  std::size_t pos = 8;
  out_args.clear();
  for (const ParamDesc& p : desc.params) {
    if (pos + 4 > frame.size()) return false;
    std::uint32_t len = get_u32(frame.data() + pos);
    pos += 4;
    if (pos + len > frame.size()) return false;
    if (p.type == ParamType::Scalar) {
      if (len != 8) return false;
      out_args.emplace_back(get_u64(frame.data() + pos));
    } else {
      out_args.emplace_back(
          std::vector<std::uint8_t>(frame.begin() + pos, frame.begin() + pos + len));
    }
    pos += len;
  }
  return true;
}

ChannelResult ChannelRuntime::call(ChannelState& ch,
                                   const CallDescriptor& desc,
                                   std::vector<CallValue>& args,
                                   const std::function<void()>& after_copy) {
  ChannelResult res;
  if (ch.phase != ChannelPhase::Attested) {
    res.err = ChannelErr::ChannelNotAttested;
    return res;
  }
  auto hit = handlers_.find(desc.fn);
  if (hit == handlers_.end()) {
    res.err = ChannelErr::UnknownFunction;
    return res;
  }

  ChannelErr merr = ChannelErr::Ok;
  auto frame = marshal_frame(desc, args, merr);
  if (!frame) {
    res.err = merr;
    return res;
  }

  // Caller marshals into the shared page.
  m_.write_bytes(cpu_a_, ch.mapped_va, 0, std::span(*frame));

  // Callee copies the whole frame into its private memory before touching
  // any of it; later shared-page mutations cannot reach the call.
  Page snapshot{};
  m_.read_page(cpu_b_, ch.mapped_va, snapshot);

  if (after_copy) after_copy();

  std::vector<CallValue> callee_args;
  if (!demarshal_frame(std::span(snapshot.data(), frame->size()), desc,
                       callee_args)) {
    res.err = ChannelErr::TypeMismatch;
    return res;
  }
  hit->second(callee_args);

  // Out-params travel back through the shared page.
  ChannelErr rerr = ChannelErr::Ok;
  auto response = marshal_frame(desc, callee_args, rerr);
  if (!response) {
    res.err = rerr;
    return res;
  }
  m_.write_bytes(cpu_b_, ch.mapped_va, 0, std::span(*response));

  Page back{};
  m_.read_page(cpu_a_, ch.mapped_va, back);
  std::vector<CallValue> returned;
  if (!demarshal_frame(std::span(back.data(), response->size()), desc,
                       returned)) {
    res.err = ChannelErr::TypeMismatch;
    return res;
  }
  for (std::size_t i = 0; i < desc.params.size(); ++i) {
    if (desc.params[i].dir != ParamDir::In) args[i] = returned[i];
  }
  return res;
}

CallDescriptor call_descriptor_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  CallDescriptor d;
  d.fn = j.at("fn").get<std::uint32_t>();
  for (const auto& pj : j.at("params")) {
    ParamDesc p;
    p.name = pj.at("name").get<std::string>();
    std::string type = pj.at("type").get<std::string>();
    if (type == "scalar") {
      p.type = ParamType::Scalar;
    } else if (type == "fixed-buffer") {
      p.type = ParamType::FixedBuffer;
      p.fixed_len = pj.at("len").get<std::uint32_t>();
    } else if (type == "counted-array") {
      p.type = ParamType::CountedArray;
      p.elem_size = pj.at("elem").get<std::uint32_t>();
    } else {
      throw std::runtime_error("unknown param type: " + type);
    }
    std::string dir = pj.at("dir").get<std::string>();
    p.dir = dir == "in" ? ParamDir::In
                        : (dir == "out" ? ParamDir::Out : ParamDir::InOut);
    d.params.push_back(std::move(p));
  }
  return d;
}

}  // namespace sboxsim
