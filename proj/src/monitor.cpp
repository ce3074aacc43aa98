#include "sboxsim/monitor.hpp"

namespace sboxsim {

const char* verdict_kind_name(VerdictKind v) {
  switch (v) {
    case VerdictKind::Execute: return "Execute";
    case VerdictKind::ExecuteLog: return "Execute+Log";
    case VerdictKind::ExecuteNotify: return "Execute+Notify";
    case VerdictKind::Trap: return "Trap";
    case VerdictKind::Kill: return "Kill";
    case VerdictKind::Denied: return "Denied";
  }
  return "?";
}

const char* iago_kind_name(IagoKind k) {
  switch (k) {
    case IagoKind::RangeViolation: return "RangeViolation";
    case IagoKind::UnknownDescriptor: return "UnknownDescriptor";
    case IagoKind::SharedSyncObject: return "SharedSyncObject";
    case IagoKind::RawPointerLeak: return "RawPointerLeak";
  }
  return "?";
}

namespace {

bool is_network_sysno(std::uint64_t sysno) {
  return sysno == sysno::kSocket || sysno == sysno::kConnect ||
         sysno == sysno::kAccept;
}

bool rule_matches(const Rule& rule, const SyscallRequest& req) {
  if (rule.sysno != req.sysno) return false;
  if (rule.is_cidr) {
    return req.args.ipv4 &&
           cidr_contains(rule.cidr_addr, rule.cidr_prefix, *req.args.ipv4);
  }
  return req.args.path && glob_match(rule.pattern, *req.args.path);
}

}  // namespace

Verdict filter_syscall(const SyscallRequest& req, const Policy& policy) {
  // Rules evaluate in file order; the first matching rule decides.
  bool whitelist_present = false;
  std::optional<std::size_t> permit_rule;
  for (std::size_t i = 0; i < policy.rules.size(); ++i) {
    const Rule& rule = policy.rules[i];
    if (rule.sysno != req.sysno) continue;
    if (rule.kind == ListKind::Whitelist) whitelist_present = true;
    if (!rule_matches(rule, req)) continue;
    if (rule.kind == ListKind::Blacklist) {
      return Verdict{VerdictKind::Denied, i, "DeniedByRule"};
    }
    permit_rule = i;
    break;
  }
  if (whitelist_present && !permit_rule) {
    return Verdict{VerdictKind::Denied, std::nullopt,
                   "no whitelist rule matched"};
  }

  auto action = policy.actions.find(req.sysno);
  if (action == policy.actions.end()) {
    // Least privilege: anything the policy does not name is rejected.
    return Verdict{VerdictKind::Denied, std::nullopt, "no action for sysno"};
  }
  switch (action->second) {
    case ActionCode::Allow:
      return Verdict{VerdictKind::Execute, permit_rule, ""};
    case ActionCode::Log:
      return Verdict{VerdictKind::ExecuteLog, permit_rule, ""};
    case ActionCode::Notify:
      return Verdict{VerdictKind::ExecuteNotify, permit_rule, ""};
    case ActionCode::Trap:
      return Verdict{VerdictKind::Trap, permit_rule, ""};
    case ActionCode::Kill:
      return Verdict{VerdictKind::Kill, permit_rule, ""};
  }
  return Verdict{VerdictKind::Denied, std::nullopt, "unreachable"};
}

ReturnCheck validate_return(
    const SyscallRequest& req, std::int64_t raw, FdTable& fds,
    const std::function<bool(EnclaveId, std::uint64_t)>& va_inside_enclave) {
  switch (req.sysno) {
    case sysno::kRead:
    case sysno::kWrite: {
      const std::int64_t len =
          req.args.len ? static_cast<std::int64_t>(*req.args.len) : 0;
      if (raw < -1 || raw > len) {
        return IagoViolation{IagoKind::RangeViolation,
                             "return outside [-1, len]"};
      }
      return CheckedReturn{raw};
    }
    case sysno::kOpen:
    case sysno::kSocket:
    case sysno::kAccept: {
      if (raw == -1) return CheckedReturn{-1};
      if (raw < -1) {
        return IagoViolation{IagoKind::RangeViolation,
                             "descriptor below -1"};
      }
      if (fds.kernel_fd_live(raw)) {
        return IagoViolation{IagoKind::UnknownDescriptor,
                             "kernel reused a live descriptor"};
      }
      std::string tag = req.args.path ? *req.args.path : "socket";
      std::uint64_t handle = fds.issue(req.origin, raw, std::move(tag));
      // Only the monitor handle ever reaches the bi-enclave.
      return CheckedReturn{static_cast<std::int64_t>(handle)};
    }
    case sysno::kClose: {
      if (!req.args.fd_handle ||
          !fds.resolve(req.origin, *req.args.fd_handle)) {
        return IagoViolation{IagoKind::UnknownDescriptor,
                             "close of unknown handle"};
      }
      fds.close(req.origin, *req.args.fd_handle);
      return CheckedReturn{raw};
    }
    case sysno::kFutex: {
      if (!req.args.addr_va ||
          !va_inside_enclave(req.origin, *req.args.addr_va)) {
        return IagoViolation{IagoKind::SharedSyncObject,
                             "sync object outside private enclave memory"};
      }
      return CheckedReturn{raw};
    }
    case sysno::kMmap:
      // Pointer-bearing returns are never forwarded raw.
      return IagoViolation{IagoKind::RawPointerLeak,
                           "raw pointer return suppressed"};
    default:
      return CheckedReturn{raw};
  }
}

std::int64_t HonestKernel::perform(const SyscallRequest& req,
                                   std::int64_t kernel_fd_hint) {
  switch (req.sysno) {
    case sysno::kRead:
    case sysno::kWrite:
      return req.args.len ? static_cast<std::int64_t>(*req.args.len) : 0;
    case sysno::kOpen:
    case sysno::kSocket:
    case sysno::kAccept:
      return kernel_fd_hint;
    default:
      return 0;
  }
}

void ScriptedKernel::script(std::uint64_t sysno, std::int64_t value) {
  scripted_[sysno].push_back(value);
}

std::int64_t ScriptedKernel::perform(const SyscallRequest& req,
                                     std::int64_t kernel_fd_hint) {
  auto it = scripted_.find(req.sysno);
  if (it != scripted_.end() && !it->second.empty()) {
    std::int64_t v = it->second.front();
    it->second.erase(it->second.begin());
    return v;
  }
  return honest_.perform(req, kernel_fd_hint);
}

std::uint64_t FdTable::issue(EnclaveId owner, std::int64_t kernel_fd,
                             std::string tag) {
  std::uint64_t handle = next_handle_++;
  handles_[handle] = FdRecord{owner, kernel_fd, std::move(tag)};
  live_kernel_fds_.insert(kernel_fd);
  return handle;
}

const FdRecord* FdTable::resolve(EnclaveId owner, std::uint64_t handle) const {
  auto it = handles_.find(handle);
  if (it == handles_.end() || it->second.owner != owner) return nullptr;
  return &it->second;
}

bool FdTable::close(EnclaveId owner, std::uint64_t handle) {
  auto it = handles_.find(handle);
  if (it == handles_.end() || it->second.owner != owner) return false;
  live_kernel_fds_.erase(it->second.kernel_fd);
  handles_.erase(it);
  return true;
}

bool FdTable::kernel_fd_live(std::int64_t kernel_fd) const {
  return live_kernel_fds_.contains(kernel_fd);
}

std::optional<PolicyParseError> Monitor::load_policy_text(
    const std::string& bytes) {
  auto result = load_policy(bytes);
  if (auto* err = std::get_if<PolicyParseError>(&result)) return *err;
  policy_ = std::get<Policy>(std::move(result));
  return std::nullopt;
}

std::variant<Digest, MonitorErr> Monitor::digest_query_os() const {
  if (!policy_) return MonitorErr::NoPolicyLoaded;
  return policy_->digest;
}

std::variant<Digest, MonitorErr> Monitor::digest_query_enclave(
    EnclaveId id) const {
  if (!policy_) return MonitorErr::NoPolicyLoaded;
  if (!channels_.contains(id)) return MonitorErr::NoChannel;
  return policy_->digest;
}

void Monitor::register_channel(EnclaveId bi_enclave) {
  channels_.insert(bi_enclave);
}

SyscallOutcome Monitor::handle(const SyscallRequest& req,
                               KernelModel& kernel) {
  SyscallOutcome out;
  if (!policy_ || !channels_.contains(req.origin) ||
      killed_.contains(req.origin)) {
    out.verdict = Verdict{VerdictKind::Denied, std::nullopt,
                          killed_.contains(req.origin) ? "terminated"
                                                       : "no channel/policy"};
    return out;
  }

  // Requests that reference a monitor handle are validated before anything
  // reaches the kernel; a foreign or stale handle is an Iago signal.
  if (req.args.fd_handle && req.sysno != sysno::kClose) {
    if (!fds_.resolve(req.origin, *req.args.fd_handle)) {
      out.verdict = Verdict{VerdictKind::Denied, std::nullopt, "bad handle"};
      out.iago = IagoViolation{IagoKind::UnknownDescriptor,
                               "handle not issued to this enclave"};
      events_.push_back({"iago", req.origin, req.sysno,
                         iago_kind_name(out.iago->kind)});
      return out;
    }
  }

  out.verdict = filter_syscall(req, *policy_);
  switch (out.verdict.kind) {
    case VerdictKind::Denied:
      events_.push_back({"deny", req.origin, req.sysno, out.verdict.detail});
      return out;
    case VerdictKind::Kill:
      killed_.insert(req.origin);
      events_.push_back({"kill", req.origin, req.sysno,
                         "termination request sent to kernel"});
      return out;
    case VerdictKind::Trap:
      events_.push_back({"trap", req.origin, req.sysno, ""});
      if (trap_hook_) trap_hook_(req);
      return out;
    case VerdictKind::ExecuteNotify:
      events_.push_back({"notify", req.origin, req.sysno, ""});
      break;
    default:
      break;
  }

  const std::int64_t raw = kernel.perform(req, next_kernel_fd_hint_++);
  out.executed = true;
  ReturnCheck check = validate_return(req, raw, fds_, va_inside_enclave_);
  if (auto* v = std::get_if<IagoViolation>(&check)) {
    out.iago = *v;
    events_.push_back({"iago", req.origin, req.sysno,
                       iago_kind_name(v->kind)});
    return out;  // result suppressed
  }
  out.ret = std::get<CheckedReturn>(check);

  ResourceDelta delta;
  if (req.sysno == sysno::kRead && out.ret->value > 0) {
    delta.file_read = static_cast<std::uint64_t>(out.ret->value);
  } else if (req.sysno == sysno::kWrite && out.ret->value > 0) {
    delta.file_written = static_cast<std::uint64_t>(out.ret->value);
  } else if (is_network_sysno(req.sysno)) {
    delta.net = req.args.len.value_or(0);
  }
  log_.append(req.origin, req.sysno, delta);
  return out;
}

}  // namespace sboxsim
