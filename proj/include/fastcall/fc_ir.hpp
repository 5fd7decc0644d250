#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "fastcall/cost_model.hpp"
#include "fastcall/memory_model.hpp"

namespace fastcall::ir {

inline constexpr unsigned kRegisterCount = 16;
inline constexpr double kDefaultWcetCeilingNs = 5700.0;

enum class Opcode {
  MovImm,
  MovReg,
  Add,
  Sub,
  And,
  Or,
  Shl,
  Shr,
  CmpJne,
  CmpJeq,
  Load,
  Store,
  LoadConfig,
  FenceNt,
  Ret,
};

std::string_view mnemonic(Opcode op);

// Register or immediate source operand.
struct Operand {
  bool is_reg = false;
  std::uint64_t value = 0;  // register index or immediate

  static Operand reg(unsigned r) { return {true, r}; }
  static Operand imm(std::uint64_t v) { return {false, v}; }
};

/*
 * Operand usage per opcode:
 *   MOV_IMM    dst, src(imm)
 *   MOV_REG    dst, src(reg)
 *   ALU        dst, lhs, src            dst = lhs op src
 *   CMP_J*     lhs, src, target
 *   LOAD       dst, slot, src(offset), width
 *   STORE      slot, src(offset), lhs(value), width
 *   LOAD_CONFIG dst, param
 *   RET        lhs
 */
struct Instruction {
  Opcode op = Opcode::Ret;
  unsigned dst = 0;
  unsigned lhs = 0;
  Operand src;
  std::uint32_t slot = 0;
  unsigned width = 8;
  std::uint64_t target = 0;
  std::uint32_t param = 0;
  int line = 0;
};

struct SlotDecl {
  std::uint32_t id = 0;
  RegionKind kind = RegionKind::Scratchpad;
  std::uint64_t min_length = 0;
};

struct FastcallProgram {
  std::vector<Instruction> instructions;
  std::vector<SlotDecl> slots;
  std::vector<std::uint64_t> config;

  const SlotDecl* slot(std::uint32_t id) const;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(int line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

FastcallProgram parse_program(std::string_view text);
std::string to_text(const FastcallProgram& program);

struct Violation {
  std::optional<std::size_t> index;  // empty for whole-program rules
  std::string rule;
  std::string message;
};

struct VerifierReport {
  bool accepted = false;
  std::vector<Violation> violations;
  double wcet_ns = 0;
  std::size_t max_path_len = 0;

  bool has_rule(std::string_view rule) const;
};

// Cost of one execution of `inst` given the declared kind of the slot it touches.
double instruction_cost(const Instruction& inst, const FastcallProgram& program,
                        const InstructionCosts& costs);

struct WcetResult {
  double cost_ns = 0;
  std::size_t path_len = 0;
};

// Longest path through the (forward-only) control-flow graph starting at instruction 0.
WcetResult analyze_wcet(const FastcallProgram& program, const InstructionCosts& costs);
inline double wcet(const FastcallProgram& program, const InstructionCosts& costs) {
  return analyze_wcet(program, costs).cost_ns;
}

VerifierReport verify(const FastcallProgram& program,
                      double wcet_ceiling_ns = kDefaultWcetCeilingNs,
                      const InstructionCosts& costs = {});

// Memory seen by the interpreter. Offsets are relative to the region base; implementations
// check protection and throw ExecutionFault on refusal.
class MemoryPort {
 public:
  virtual ~MemoryPort() = default;
  virtual std::uint64_t load(const MemoryRegion& region, std::uint64_t offset, unsigned width) = 0;
  virtual void store(const MemoryRegion& region, std::uint64_t offset, unsigned width,
                     std::uint64_t value) = 0;
};

class ExecutionFault : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct MachineState {
  std::array<std::uint64_t, kRegisterCount> registers{};
  std::map<std::uint32_t, MemoryRegion> bound_regions;
  std::vector<std::uint64_t> config;
};

struct MemoryAccess {
  enum class Op { Load, Store };
  Op op = Op::Load;
  RegionId region{};
  RegionKind kind = RegionKind::Scratchpad;
  std::uint64_t address = 0;
  unsigned width = 0;
  std::uint64_t value = 0;
};

struct InvocationOutcome {
  std::uint64_t return_value = 0;
  std::size_t instructions_executed = 0;
  double modeled_cost_ns = 0;
  std::vector<MemoryAccess> memory_trace;
};

// Runs a verified program. Throws ExecutionFault on anything a verified program cannot do
// (unbound slot, kind mismatch, out-of-region access, falling off the end).
InvocationOutcome interpret(const FastcallProgram& program, MachineState& state, MemoryPort& memory,
                            const InstructionCosts& costs = {});

// Byte buffers per region; permits every in-bounds access its region kind allows to the
// fastcall domain. Used for standalone runs and tests.
class BufferMemory : public MemoryPort {
 public:
  std::vector<std::uint8_t>& buffer(const MemoryRegion& region);
  std::uint64_t load(const MemoryRegion& region, std::uint64_t offset, unsigned width) override;
  void store(const MemoryRegion& region, std::uint64_t offset, unsigned width,
             std::uint64_t value) override;

 private:
  std::map<RegionId, std::vector<std::uint8_t>> buffers_;
};

std::uint64_t load_le(std::span<const std::uint8_t> bytes, std::uint64_t offset, unsigned width);
void store_le(std::span<std::uint8_t> bytes, std::uint64_t offset, unsigned width,
              std::uint64_t value);

}  // namespace fastcall::ir
