#include "fastcall/fc_ir.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <limits>
#include <sstream>

#include "fastcall/kv_config.hpp"

namespace fastcall::ir {

namespace {

constexpr std::uint64_t kMax = std::numeric_limits<std::uint64_t>::max();

struct OpInfo {
  Opcode op;
  std::string_view name;
};

constexpr OpInfo kOps[] = {
    {Opcode::MovImm, "MOV_IMM"},     {Opcode::MovReg, "MOV_REG"}, {Opcode::Add, "ADD"},
    {Opcode::Sub, "SUB"},            {Opcode::And, "AND"},        {Opcode::Or, "OR"},
    {Opcode::Shl, "SHL"},            {Opcode::Shr, "SHR"},        {Opcode::CmpJne, "CMP_JNE"},
    {Opcode::CmpJeq, "CMP_JEQ"},     {Opcode::Load, "LOAD"},      {Opcode::Store, "STORE"},
    {Opcode::LoadConfig, "LOAD_CONFIG"}, {Opcode::FenceNt, "FENCE_NT"}, {Opcode::Ret, "RET"},
};

bool is_branch(Opcode op) { return op == Opcode::CmpJne || op == Opcode::CmpJeq; }

bool valid_width(unsigned w) { return w == 1 || w == 2 || w == 4 || w == 8; }

std::uint64_t alu(Opcode op, std::uint64_t a, std::uint64_t b) {
  switch (op) {
    case Opcode::Add: return a + b;
    case Opcode::Sub: return a - b;
    case Opcode::And: return a & b;
    case Opcode::Or: return a | b;
    case Opcode::Shl: return a << (b & 63);
    case Opcode::Shr: return a >> (b & 63);
    default: return 0;
  }
}

std::uint64_t width_mask(unsigned width) {
  return width >= 8 ? kMax : (std::uint64_t{1} << (8 * width)) - 1;
}

// ---- parsing ---------------------------------------------------------------------------------

struct PendingTarget {
  std::size_t index;
  std::string label;
  int line;
};

class Parser {
 public:
  explicit Parser(std::string_view text) : text_(text) {}

  FastcallProgram run() {
    std::size_t pos = 0;
    while (pos <= text_.size()) {
      auto nl = text_.find('\n', pos);
      std::string_view line =
          text_.substr(pos, nl == std::string_view::npos ? text_.npos : nl - pos);
      pos = nl == std::string_view::npos ? text_.size() + 1 : nl + 1;
      ++line_;
      if (auto hash = line.find('#'); hash != line.npos) line = line.substr(0, hash);
      parse_line(trim(line));
    }
    for (const auto& p : pending_) {
      auto it = labels_.find(p.label);
      if (it == labels_.end()) throw ParseError(p.line, "undefined label `" + p.label + "`");
      prog_.instructions[p.index].target = it->second;
    }
    return std::move(prog_);
  }

 private:
  [[noreturn]] void fail(const std::string& msg) const { throw ParseError(line_, msg); }

  void parse_line(std::string_view line) {
    if (line.empty()) return;
    // Optional `label:` prefix.
    auto colon = line.find(':');
    auto first_space = line.find_first_of(" \t");
    if (colon != line.npos && (first_space == line.npos || colon < first_space)) {
      std::string label(trim(line.substr(0, colon)));
      if (label.empty() || !std::all_of(label.begin(), label.end(), [](char c) {
            return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
          }))
        fail("invalid label `" + label + "`");
      if (!labels_.emplace(label, prog_.instructions.size()).second)
        fail("duplicate label `" + label + "`");
      line = trim(line.substr(colon + 1));
      if (line.empty()) return;
    }

    auto sp = line.find_first_of(" \t");
    std::string_view head = line.substr(0, sp);
    std::string_view rest = sp == line.npos ? std::string_view{} : trim(line.substr(sp));

    if (head == "SLOT") return parse_slot(rest);
    if (head == "PARAM") {
      prog_.config.push_back(imm(rest));
      return;
    }

    const OpInfo* info = nullptr;
    for (const auto& o : kOps)
      if (o.name == head) info = &o;
    if (!info) fail("unknown opcode `" + std::string(head) + "`");

    auto ops = split_list(rest);
    Instruction in;
    in.op = info->op;
    in.line = line_;
    auto expect = [&](std::size_t n) {
      if (ops.size() != n)
        fail(std::string(info->name) + " takes " + std::to_string(n) + " operand(s), got " +
             std::to_string(ops.size()));
    };

    switch (in.op) {
      case Opcode::MovImm:
        expect(2);
        in.dst = reg(ops[0]);
        in.src = Operand::imm(imm(ops[1]));
        break;
      case Opcode::MovReg:
        expect(2);
        in.dst = reg(ops[0]);
        in.src = Operand::reg(reg(ops[1]));
        break;
      case Opcode::Add:
      case Opcode::Sub:
      case Opcode::And:
      case Opcode::Or:
      case Opcode::Shl:
      case Opcode::Shr:
        if (ops.size() == 2) {  // two-operand form: dst = dst op src
          in.dst = in.lhs = reg(ops[0]);
          in.src = source(ops[1]);
        } else {
          expect(3);
          in.dst = reg(ops[0]);
          in.lhs = reg(ops[1]);
          in.src = source(ops[2]);
        }
        break;
      case Opcode::CmpJne:
      case Opcode::CmpJeq:
        expect(3);
        in.lhs = reg(ops[0]);
        in.src = source(ops[1]);
        target(ops[2], in);
        break;
      case Opcode::Load:
        expect(4);
        in.dst = reg(ops[0]);
        in.slot = slot_ref(ops[1]);
        in.src = source(ops[2]);
        in.width = width(ops[3]);
        break;
      case Opcode::Store:
        expect(4);
        in.slot = slot_ref(ops[0]);
        in.src = source(ops[1]);
        in.lhs = reg(ops[2]);
        in.width = width(ops[3]);
        break;
      case Opcode::LoadConfig: {
        expect(2);
        in.dst = reg(ops[0]);
        std::uint64_t p = imm(ops[1]);
        if (p > std::numeric_limits<std::uint32_t>::max()) fail("parameter index too large");
        in.param = static_cast<std::uint32_t>(p);
        break;
      }
      case Opcode::FenceNt:
        expect(0);
        break;
      case Opcode::Ret:
        expect(1);
        in.lhs = reg(ops[0]);
        break;
    }
    prog_.instructions.push_back(in);
  }

  void parse_slot(std::string_view rest) {
    std::vector<std::string> parts;
    std::istringstream ss{std::string(rest)};
    for (std::string tok; ss >> tok;) parts.push_back(tok);
    if (parts.size() != 3) fail("SLOT takes `sN <kind> <min-length>`");
    SlotDecl d;
    d.id = slot_ref(parts[0]);
    auto kind = parse_region_kind(parts[1]);
    if (!kind) fail("unknown region kind `" + parts[1] + "`");
    d.kind = *kind;
    d.min_length = imm(parts[2]);
    if (d.min_length == 0) fail("slot length must be > 0");
    if (prog_.slot(d.id)) fail("slot s" + std::to_string(d.id) + " declared twice");
    prog_.slots.push_back(d);
  }

  unsigned reg(std::string_view tok) const {
    if (tok.size() < 2 || tok[0] != 'r') fail("expected register, got `" + std::string(tok) + "`");
    std::uint64_t n = number(tok.substr(1), tok);
    if (n >= kRegisterCount) fail("register index > 15: `" + std::string(tok) + "`");
    return static_cast<unsigned>(n);
  }

  std::uint32_t slot_ref(std::string_view tok) const {
    if (tok.size() < 2 || tok[0] != 's') fail("expected slot, got `" + std::string(tok) + "`");
    std::uint64_t n = number(tok.substr(1), tok);
    if (n > std::numeric_limits<std::uint32_t>::max()) fail("slot id too large");
    return static_cast<std::uint32_t>(n);
  }

  unsigned width(std::string_view tok) const {
    if (tok.size() != 2 || tok[0] != 'w' || !valid_width(static_cast<unsigned>(tok[1] - '0')))
      fail("expected width w1, w2, w4 or w8, got `" + std::string(tok) + "`");
    return static_cast<unsigned>(tok[1] - '0');
  }

  Operand source(std::string_view tok) const {
    if (!tok.empty() && tok[0] == 'r') return Operand::reg(reg(tok));
    return Operand::imm(imm(tok));
  }

  void target(std::string_view tok, Instruction& in) {
    if (!tok.empty() && tok[0] == '@') {
      pending_.push_back({prog_.instructions.size(), std::string(tok.substr(1)), line_});
      return;
    }
    if (!tok.empty() && tok[0] == '-') fail("branch target must be a forward instruction index");
    in.target = number(tok, tok);
  }

  std::uint64_t imm(std::string_view tok) const {
    if (tok.empty()) fail("missing immediate");
    if (tok[0] == '-') {
      std::uint64_t mag = imm(tok.substr(1));
      return ~mag + 1;
    }
    return number(tok, tok);
  }

  std::uint64_t number(std::string_view digits, std::string_view whole) const {
    int base = 10;
    if (digits.size() > 2 && digits[0] == '0' && (digits[1] == 'x' || digits[1] == 'X')) {
      digits.remove_prefix(2);
      base = 16;
    }
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), v, base);
    if (digits.empty() || ec != std::errc{} || p != digits.data() + digits.size())
      fail("bad number `" + std::string(whole) + "`");
    return v;
  }

  std::string_view text_;
  int line_ = 0;
  FastcallProgram prog_;
  std::map<std::string, std::size_t> labels_;
  std::vector<PendingTarget> pending_;
};

// ---- abstract interpretation -----------------------------------------------------------------

struct Interval {
  std::uint64_t lo = 0;
  std::uint64_t hi = kMax;

  static Interval top() { return {}; }
  static Interval exact(std::uint64_t v) { return {v, v}; }
  bool is_top() const { return lo == 0 && hi == kMax; }
  bool singleton() const { return lo == hi; }
  bool contains(std::uint64_t v) const { return lo <= v && v <= hi; }
};

Interval join(Interval a, Interval b) { return {std::min(a.lo, b.lo), std::max(a.hi, b.hi)}; }

std::uint64_t smear(std::uint64_t v) {
  for (int s = 1; s < 64; s <<= 1) v |= v >> s;
  return v;
}

Interval transfer(Opcode op, Interval a, Interval b) {
  if (a.singleton() && b.singleton()) return Interval::exact(alu(op, a.lo, b.lo));
  switch (op) {
    case Opcode::Add:
      if (a.hi > kMax - b.hi) return Interval::top();
      return {a.lo + b.lo, a.hi + b.hi};
    case Opcode::Sub:
      if (a.lo < b.hi) return Interval::top();
      return {a.lo - b.hi, a.hi - b.lo};
    case Opcode::And: return {0, std::min(a.hi, b.hi)};
    case Opcode::Or: return {std::max(a.lo, b.lo), smear(a.hi | b.hi)};
    case Opcode::Shl:
      if (b.hi >= 64 || (b.hi > 0 && a.hi > (kMax >> b.hi))) return Interval::top();
      return {a.lo << b.lo, a.hi << b.hi};
    case Opcode::Shr:
      if (b.hi >= 64) return {0, a.hi};
      return {a.lo >> b.hi, a.hi >> b.lo};
    default: return Interval::top();
  }
}

using RegState = std::array<Interval, kRegisterCount>;

void merge_into(std::optional<RegState>& dst, const RegState& src) {
  if (!dst) {
    dst = src;
    return;
  }
  for (unsigned r = 0; r < kRegisterCount; ++r) (*dst)[r] = join((*dst)[r], src[r]);
}

// Narrows `v` under the assumption `v == c` (equal) or `v != c`. Returns false when the
// assumption is unsatisfiable.
bool refine(Interval& v, std::uint64_t c, bool equal) {
  if (equal) {
    if (!v.contains(c)) return false;
    v = Interval::exact(c);
    return true;
  }
  if (v.singleton()) return v.lo != c;
  if (v.lo == c) ++v.lo;
  else if (v.hi == c) --v.hi;
  return true;
}

void add(VerifierReport& rep, std::size_t index, std::string rule, std::string message) {
  rep.violations.push_back({index, std::move(rule), std::move(message)});
}

}  // namespace

std::string_view mnemonic(Opcode op) {
  for (const auto& o : kOps)
    if (o.op == op) return o.name;
  return "?";
}

const SlotDecl* FastcallProgram::slot(std::uint32_t id) const {
  for (const auto& s : slots)
    if (s.id == id) return &s;
  return nullptr;
}

FastcallProgram parse_program(std::string_view text) { return Parser(text).run(); }

std::string to_text(const FastcallProgram& program) {
  std::ostringstream out;
  auto src = [](const Operand& o) {
    return o.is_reg ? "r" + std::to_string(o.value) : std::to_string(o.value);
  };
  for (const auto& s : program.slots)
    out << "SLOT s" << s.id << ' ' << to_string(s.kind) << ' ' << s.min_length << '\n';
  for (auto c : program.config) out << "PARAM " << c << '\n';
  for (const auto& in : program.instructions) {
    out << mnemonic(in.op);
    switch (in.op) {
      case Opcode::MovImm:
      case Opcode::MovReg: out << " r" << in.dst << ", " << src(in.src); break;
      case Opcode::Add:
      case Opcode::Sub:
      case Opcode::And:
      case Opcode::Or:
      case Opcode::Shl:
      case Opcode::Shr: out << " r" << in.dst << ", r" << in.lhs << ", " << src(in.src); break;
      case Opcode::CmpJne:
      case Opcode::CmpJeq: out << " r" << in.lhs << ", " << src(in.src) << ", " << in.target; break;
      case Opcode::Load:
        out << " r" << in.dst << ", s" << in.slot << ", " << src(in.src) << ", w" << in.width;
        break;
      case Opcode::Store:
        out << " s" << in.slot << ", " << src(in.src) << ", r" << in.lhs << ", w" << in.width;
        break;
      case Opcode::LoadConfig: out << " r" << in.dst << ", " << in.param; break;
      case Opcode::FenceNt: break;
      case Opcode::Ret: out << " r" << in.lhs; break;
    }
    out << '\n';
  }
  return out.str();
}

bool VerifierReport::has_rule(std::string_view rule) const {
  return std::any_of(violations.begin(), violations.end(),
                     [rule](const Violation& v) { return v.rule == rule; });
}

double instruction_cost(const Instruction& inst, const FastcallProgram& program,
                        const InstructionCosts& costs) {
  switch (inst.op) {
    case Opcode::Load:
    case Opcode::Store: {
      const SlotDecl* s = program.slot(inst.slot);
      return s && s->kind == RegionKind::DeviceMMIO ? costs.uncached_ns : costs.cached_mem_ns;
    }
    case Opcode::FenceNt: return costs.uncached_ns;
    default: return costs.alu_ns;
  }
}

WcetResult analyze_wcet(const FastcallProgram& program, const InstructionCosts& costs) {
  const auto& code = program.instructions;
  const std::size_t n = code.size();
  std::vector<WcetResult> best(n + 1);  // best[n]: fell off the end
  for (std::size_t i = n; i-- > 0;) {
    const Instruction& in = code[i];
    WcetResult tail{};
    auto consider = [&](std::size_t succ) {
      if (succ <= i || succ > n) return;  // backward edges are rejected elsewhere
      tail.cost_ns = std::max(tail.cost_ns, best[succ].cost_ns);
      tail.path_len = std::max(tail.path_len, best[succ].path_len);
    };
    if (in.op != Opcode::Ret) consider(i + 1);
    if (is_branch(in.op)) consider(in.target);
    best[i] = {instruction_cost(in, program, costs) + tail.cost_ns, 1 + tail.path_len};
  }
  return n == 0 ? WcetResult{} : best[0];
}

VerifierReport verify(const FastcallProgram& program, double wcet_ceiling_ns,
                      const InstructionCosts& costs) {
  VerifierReport rep;
  const auto& code = program.instructions;
  const std::size_t n = code.size();

  if (n == 0) rep.violations.push_back({std::nullopt, "missing-ret", "program is empty"});

  for (const auto& s : program.slots) {
    if (!permits(AccessDomain::Fastcall, s.kind, Access::Read) &&
        !permits(AccessDomain::Fastcall, s.kind, Access::Write))
      rep.violations.push_back({std::nullopt, "slot-kind-not-permitted",
                                "fastcalls cannot access " + std::string(to_string(s.kind)) +
                                    " (slot s" + std::to_string(s.id) + ")"});
  }

  // Structural rules, independent of reachability.
  for (std::size_t i = 0; i < n; ++i) {
    const Instruction& in = code[i];
    bool regs_ok = in.dst < kRegisterCount && in.lhs < kRegisterCount &&
                   (!in.src.is_reg || in.src.value < kRegisterCount);
    if (!regs_ok) add(rep, i, "invalid-register", "register index out of range");
    if (is_branch(in.op)) {
      if (in.target <= i)
        add(rep, i, "backward-branch",
            "target " + std::to_string(in.target) + " does not lie after the branch");
      else if (in.target >= n)
        add(rep, i, "branch-out-of-range",
            "target " + std::to_string(in.target) + " is past the last instruction");
    }
    if (in.op == Opcode::Load || in.op == Opcode::Store) {
      if (!valid_width(in.width)) add(rep, i, "invalid-width", "width must be 1, 2, 4 or 8");
      const SlotDecl* s = program.slot(in.slot);
      if (!s) {
        add(rep, i, "unbound-slot", "slot s" + std::to_string(in.slot) + " is not declared");
      } else {
        Access acc = in.op == Opcode::Load ? Access::Read : Access::Write;
        if (!permits(AccessDomain::Fastcall, s->kind, acc))
          add(rep, i, s->kind == RegionKind::SharedRO ? "write-to-read-only" : "slot-kind-not-permitted",
              std::string(to_string(acc)) + " of " + std::string(to_string(s->kind)) +
                  " slot s" + std::to_string(s->id) + " is not allowed");
      }
    }
    if (in.op == Opcode::LoadConfig && in.param >= program.config.size())
      add(rep, i, "unknown-config",
          "parameter " + std::to_string(in.param) + " is not declared");
  }

  // Interval analysis over the DAG. Entry registers are adversarial.
  if (n > 0 && std::none_of(rep.violations.begin(), rep.violations.end(), [](const Violation& v) {
        return v.rule == "invalid-register";
      })) {
    std::vector<std::optional<RegState>> states(n);
    states[0] = RegState{};
    bool fell_off = false;
    for (std::size_t i = 0; i < n; ++i) {
      if (!states[i]) continue;
      RegState st = *states[i];
      const Instruction& in = code[i];
      auto src = [&](const Operand& o) {
        return o.is_reg ? st[o.value] : Interval::exact(o.value);
      };
      bool falls_through = true;

      switch (in.op) {
        case Opcode::MovImm:
        case Opcode::MovReg: st[in.dst] = src(in.src); break;
        case Opcode::Add:
        case Opcode::Sub:
        case Opcode::And:
        case Opcode::Or:
        case Opcode::Shl:
        case Opcode::Shr: st[in.dst] = transfer(in.op, st[in.lhs], src(in.src)); break;
        case Opcode::LoadConfig:
          st[in.dst] = in.param < program.config.size() ? Interval::exact(program.config[in.param])
                                                        : Interval::top();
          break;
        case Opcode::Load:
        case Opcode::Store: {
          const SlotDecl* s = program.slot(in.slot);
          if (s && valid_width(in.width)) {
            Interval off = src(in.src);
            bool fits = off.hi <= s->min_length && in.width <= s->min_length - off.hi;
            if (!fits) {
              if (off.is_top())
                add(rep, i, "unbounded-offset",
                    "offset register r" + std::to_string(in.src.value) + " has no provable bound");
              else
                add(rep, i, "out-of-region",
                    "access [" + std::to_string(off.hi) + ", " +
                        std::to_string(off.hi + in.width) + ") may exceed slot s" +
                        std::to_string(s->id) + " of " + std::to_string(s->min_length) + " bytes");
            }
          }
          if (in.op == Opcode::Load) st[in.dst] = {0, width_mask(in.width)};
          break;
        }
        case Opcode::CmpJne:
        case Opcode::CmpJeq: {
          Interval rhs = src(in.src);
          RegState taken = st;
          bool equal_on_taken = in.op == Opcode::CmpJeq;
          bool taken_ok = true;
          bool fall_ok = true;
          if (rhs.singleton()) {
            taken_ok = refine(taken[in.lhs], rhs.lo, equal_on_taken);
            fall_ok = refine(st[in.lhs], rhs.lo, !equal_on_taken);
          }
          if (taken_ok && in.target > i && in.target < n) merge_into(states[in.target], taken);
          falls_through = fall_ok;
          break;
        }
        case Opcode::FenceNt: break;
        case Opcode::Ret: falls_through = false; break;
      }

      if (falls_through) {
        if (i + 1 < n) merge_into(states[i + 1], st);
        else if (!fell_off) {
          fell_off = true;
          add(rep, i, "missing-ret", "execution can run past the last instruction");
        }
      }
    }
  }

  WcetResult w = analyze_wcet(program, costs);
  rep.wcet_ns = w.cost_ns;
  rep.max_path_len = w.path_len;
  if (rep.wcet_ns > wcet_ceiling_ns) {
    std::ostringstream msg;
    msg << "worst-case path costs " << rep.wcet_ns << " ns, ceiling is " << wcet_ceiling_ns
        << " ns";
    rep.violations.push_back({std::nullopt, "wcet-exceeded", msg.str()});
  }
  rep.accepted = rep.violations.empty();
  return rep;
}

std::uint64_t load_le(std::span<const std::uint8_t> bytes, std::uint64_t offset, unsigned width) {
  std::uint64_t v = 0;
  for (unsigned i = 0; i < width; ++i) v |= std::uint64_t{bytes[offset + i]} << (8 * i);
  return v;
}

void store_le(std::span<std::uint8_t> bytes, std::uint64_t offset, unsigned width,
              std::uint64_t value) {
  for (unsigned i = 0; i < width; ++i) bytes[offset + i] = static_cast<std::uint8_t>(value >> (8 * i));
}

InvocationOutcome interpret(const FastcallProgram& program, MachineState& state, MemoryPort& memory,
                            const InstructionCosts& costs) {
  InvocationOutcome out;
  auto& regs = state.registers;
  const auto& code = program.instructions;
  auto src = [&](const Operand& o) { return o.is_reg ? regs[o.value] : o.value; };

  auto region_for = [&](const Instruction& in) -> const MemoryRegion& {
    const SlotDecl* decl = program.slot(in.slot);
    auto it = state.bound_regions.find(in.slot);
    if (!decl || it == state.bound_regions.end())
      throw ExecutionFault("slot s" + std::to_string(in.slot) + " is not bound");
    if (it->second.kind != decl->kind)
      throw ExecutionFault("slot s" + std::to_string(in.slot) + " bound to wrong region kind");
    return it->second;
  };
  auto in_bounds = [](const MemoryRegion& r, std::uint64_t off, unsigned width) {
    if (off > r.length || width > r.length - off)
      throw ExecutionFault("access at offset " + std::to_string(off) + " leaves the region");
  };

  std::size_t pc = 0;
  while (true) {
    if (pc >= code.size()) throw ExecutionFault("execution ran past the last instruction");
    const Instruction& in = code[pc];
    ++out.instructions_executed;
    out.modeled_cost_ns += instruction_cost(in, program, costs);
    std::size_t next = pc + 1;

    switch (in.op) {
      case Opcode::MovImm:
      case Opcode::MovReg: regs[in.dst] = src(in.src); break;
      case Opcode::Add:
      case Opcode::Sub:
      case Opcode::And:
      case Opcode::Or:
      case Opcode::Shl:
      case Opcode::Shr: regs[in.dst] = alu(in.op, regs[in.lhs], src(in.src)); break;
      case Opcode::CmpJne:
      case Opcode::CmpJeq: {
        bool eq = regs[in.lhs] == src(in.src);
        if (eq == (in.op == Opcode::CmpJeq)) {
          if (in.target <= pc) throw ExecutionFault("backward branch");
          next = in.target;
        }
        break;
      }
      case Opcode::Load: {
        const MemoryRegion& r = region_for(in);
        std::uint64_t off = src(in.src);
        in_bounds(r, off, in.width);
        std::uint64_t v = memory.load(r, off, in.width);
        regs[in.dst] = v;
        out.memory_trace.push_back(
            {MemoryAccess::Op::Load, r.id, r.kind, r.base + off, in.width, v});
        break;
      }
      case Opcode::Store: {
        const MemoryRegion& r = region_for(in);
        std::uint64_t off = src(in.src);
        in_bounds(r, off, in.width);
        std::uint64_t v = regs[in.lhs] & width_mask(in.width);
        memory.store(r, off, in.width, v);
        out.memory_trace.push_back(
            {MemoryAccess::Op::Store, r.id, r.kind, r.base + off, in.width, v});
        break;
      }
      case Opcode::LoadConfig:
        if (in.param >= state.config.size())
          throw ExecutionFault("parameter " + std::to_string(in.param) + " is not bound");
        regs[in.dst] = state.config[in.param];
        break;
      case Opcode::FenceNt: break;
      case Opcode::Ret: out.return_value = regs[in.lhs]; return out;
    }
    pc = next;
  }
}

std::vector<std::uint8_t>& BufferMemory::buffer(const MemoryRegion& region) {
  auto& buf = buffers_[region.id];
  if (buf.size() != region.length) buf.resize(region.length, 0);
  return buf;
}

std::uint64_t BufferMemory::load(const MemoryRegion& region, std::uint64_t offset, unsigned width) {
  if (!permits(AccessDomain::Fastcall, region.kind, Access::Read))
    throw ExecutionFault("read of " + std::string(to_string(region.kind)) + " refused");
  auto& buf = buffer(region);
  if (offset > buf.size() || width > buf.size() - offset) throw ExecutionFault("out-of-region");
  return load_le(buf, offset, width);
}

void BufferMemory::store(const MemoryRegion& region, std::uint64_t offset, unsigned width,
                         std::uint64_t value) {
  if (!permits(AccessDomain::Fastcall, region.kind, Access::Write))
    throw ExecutionFault("write of " + std::string(to_string(region.kind)) + " refused");
  auto& buf = buffer(region);
  if (offset > buf.size() || width > buf.size() - offset) throw ExecutionFault("out-of-region");
  store_le(buf, offset, width, value);
}

}  // namespace fastcall::ir
