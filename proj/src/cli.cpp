#include "fastcall/cli.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <ostream>
#include <stdexcept>

#include "fastcall/bench.hpp"
#include "fastcall/cost_model.hpp"
#include "fastcall/dispatch.hpp"
#include "fastcall/fc_ir.hpp"
#include "fastcall/kv_config.hpp"
#include "fastcall/providers.hpp"

namespace fastcall::cli {

namespace {

CostParameters load_params(const std::string& path) {
  CostParameters p = CostParameters::defaults();
  if (!path.empty()) p.load_overrides(path);
  return p;
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write `" + path + "`");
  f << content;
  if (!f) throw std::runtime_error("write to `" + path + "` failed");
}

int cmd_verify(const std::string& file, double ceiling, const std::string& params_path,
               std::ostream& out) {
  CostParameters params = load_params(params_path);
  ir::FastcallProgram prog = ir::parse_program(read_text_file(file));
  ir::VerifierReport rep = ir::verify(prog, ceiling, params.instr);
  out << (rep.accepted ? "accepted" : "rejected") << ' ' << file << '\n'
      << "instructions=" << prog.instructions.size() << " wcet_ns=" << format_number(rep.wcet_ns)
      << " ceiling_ns=" << format_number(ceiling) << " max_path=" << rep.max_path_len << '\n';
  for (const auto& v : rep.violations) {
    out << "  " << v.rule;
    if (v.index) out << " @" << *v.index;
    out << ": " << v.message << '\n';
  }
  return rep.accepted ? kExitOk : kExitRejected;
}

int cmd_run(const std::string& file, const std::string& csv, const std::string& params_path,
            std::ostream& out) {
  CostParameters params = load_params(params_path);
  BenchReport rep = run_suite(parse_scenarios(read_text_file(file)), params);
  out << to_text(rep);
  if (!csv.empty()) write_file(csv, to_csv(rep));
  return kExitOk;
}

int cmd_bench(const std::string& csv, const std::string& params_path, std::ostream& out) {
  CostParameters params = load_params(params_path);
  BenchReport rep = run_suite(default_suite(), params);
  if (csv.empty()) {
    out << to_csv(rep);
  } else {
    write_file(csv, to_csv(rep));
    out << to_text(rep);
  }
  return kExitOk;
}

int cmd_breakeven(const BreakevenInputs& in, std::ostream& out) {
  BreakevenWindow w = breakeven(in);
  out << "w_max=" << format_number(w.w_max_ns) << " w_min=" << format_number(w.w_min_ns) << '\n';
  return kExitOk;
}

int cmd_lifecycle(std::uint64_t invocations, const std::string& params_path, std::ostream& out) {
  LifecycleReport rep = run_lifecycle_demo({invocations}, load_params(params_path));
  out << rep.to_text();
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Fastcall mechanism simulator"};
  app.require_subcommand(1);

  std::string params_path;
  auto add_params = [&](CLI::App* sub) {
    sub->add_option("--params", params_path, "cost parameter override file")->check(CLI::ExistingFile);
  };

  std::string ir_file;
  double ceiling = ir::kDefaultWcetCeilingNs;
  auto* verify = app.add_subcommand("verify", "statically verify a fastcall IR program");
  verify->add_option("ir-file", ir_file)->required()->check(CLI::ExistingFile);
  verify->add_option("--ceiling-ns", ceiling, "WCET budget in ns")->check(CLI::PositiveNumber);
  add_params(verify);

  std::string scenario_file;
  std::string csv_path;
  auto* run_cmd = app.add_subcommand("run", "run the scenarios of a scenario file");
  run_cmd->add_option("scenario-file", scenario_file)->required()->check(CLI::ExistingFile);
  run_cmd->add_option("--csv", csv_path, "also write the CSV report here");
  add_params(run_cmd);

  auto* bench = app.add_subcommand("bench", "run the default microbenchmark suite");
  bench->add_option("--csv", csv_path, "write the CSV report here instead of stdout");
  add_params(bench);

  BreakevenInputs be;
  auto* breakeven_cmd = app.add_subcommand("breakeven", "work window where fastcalls pay off");
  breakeven_cmd->add_option("--O", be.overhead_fraction, "negligible overhead share");
  breakeven_cmd->add_option("--os", be.syscall_overhead_ns, "system call overhead in ns");
  breakeven_cmd->add_option("--of", be.fastcall_overhead_ns, "fastcall overhead in ns");

  std::uint64_t invocations = 10;
  auto* lifecycle = app.add_subcommand("lifecycle", "register, invoke, fork and deregister");
  lifecycle->add_option("--invocations", invocations, "invocations per entry");
  add_params(lifecycle);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*verify) return cmd_verify(ir_file, ceiling, params_path, out);
    if (*run_cmd) return cmd_run(scenario_file, csv_path, params_path, out);
    if (*bench) return cmd_bench(csv_path, params_path, out);
    if (*breakeven_cmd) return cmd_breakeven(be, out);
    if (*lifecycle) return cmd_lifecycle(invocations, params_path, out);
  } catch (const InvariantViolation& e) {
    err << "invariant violation: " << e.what() << '\n';
    return kExitInvariant;
  } catch (const ConfigurationRequired& e) {
    err << "configuration required: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace fastcall::cli
