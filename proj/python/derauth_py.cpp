#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "derauth/battery.hpp"
#include "derauth/io.hpp"
#include "derauth/link.hpp"
#include "derauth/protocol.hpp"
#include "derauth/sim.hpp"
#include "derauth/store.hpp"

namespace py = pybind11;
using namespace derauth;

namespace {

link::Bytes to_bytes(const py::bytes& b) {
  const std::string s = b;
  return {s.begin(), s.end()};
}

py::bytes from_bytes(const link::Bytes& b) {
  return {reinterpret_cast<const char*>(b.data()), b.size()};
}

py::dict model_dict(const battery::DischargeModel& m) {
  py::dict d;
  d["E0"] = m.e0;
  d["K"] = m.k;
  d["A"] = m.a;
  d["B"] = m.b;
  d["R"] = m.r;
  d["Q"] = m.q;
  return d;
}

py::dict challenge_dict(const protocol::Challenge& c) {
  py::dict d;
  d["poll_mask"] = c.poll_mask;
  d["auth_mask"] = c.auth_mask;
  d["transform"] = c.transform.word;
  d["polled_cells"] = c.polled_cells();
  d["auth_cells"] = c.auth_cells();
  return d;
}

py::dict run(const std::string& pack, const std::string& scenario, std::uint64_t seed, double dt,
             double horizon, const std::string& faults) {
  sim::SimConfig cfg;
  cfg.pack = io::load_pack(pack);
  cfg.scenario = io::load_scenario(scenario);
  cfg.seed = seed;
  cfg.dt = dt;
  cfg.horizon = horizon;
  if (!faults.empty()) cfg.channel.faults = io::fault_preset(faults, cfg.scenario, cfg.timing.lead);
  sim::SimResult r;
  {
    py::gil_scoped_release release;
    r = sim::run_scenario(cfg);
  }
  py::list rounds;
  for (const auto& rec : r.rounds) {
    py::dict d;
    d["seq"] = rec.seq;
    d["time_s"] = rec.timestamp;
    d["challenge"] = rec.challenge;
    d["reply"] = rec.reply_wire;
    d["verdict"] = std::string(protocol::to_string(rec.verdict));
    d["reason"] = std::string(protocol::to_string(rec.reason));
    rounds.append(d);
  }
  py::dict out;
  out["rounds"] = rounds;
  out["initial_soc"] = r.initial_soc;
  out["final_soc"] = r.final_soc;
  out["applied_setpoints"] = r.applied.size();
  out["all_operations_applied"] = r.all_operations_applied();
  out["tables_match"] = r.master_table == r.outstation_table;
  out["report_json"] = sim::report_json(r, cfg);
  out["trace_csv"] = sim::trace_csv(r);
  return out;
}

}  // namespace

PYBIND11_MODULE(_derauth, m) {
  m.doc() = "Battery-measurement challenge-reply authentication for DER outstations";

  m.def("mix64", &mix64, py::arg("x"));
  m.def("crc16_dnp", [](const py::bytes& data) { return link::crc16_dnp(to_bytes(data)); },
        py::arg("data"));

  m.def("transform",
        [](std::uint64_t x, std::uint16_t word) { return protocol::transform(x, {word}); },
        py::arg("x"), py::arg("word"));
  m.def("inverse_transform",
        [](std::uint64_t y, std::uint16_t word) { return protocol::inverse_transform(y, {word}); },
        py::arg("y"), py::arg("word"));
  m.def(
      "quantize",
      [](double voltage, double soc) {
        const auto q = protocol::quantize_measurement(voltage, soc);
        return py::make_tuple(q.voltage, q.soc);
      },
      py::arg("voltage"), py::arg("soc"));
  m.def(
      "decode_challenge",
      [](std::uint64_t wire, std::size_t n_cells) -> py::object {
        const auto d = protocol::decode_challenge(wire, n_cells);
        if (!d.ok()) throw py::value_error(std::string(protocol::to_string(d.reason)));
        return challenge_dict(*d.challenge);
      },
      py::arg("wire"), py::arg("n_cells") = 6);

  m.def(
      "encode_frame",
      [](std::uint8_t type, std::uint8_t seq, const py::bytes& payload) {
        return from_bytes(link::encode_frame({static_cast<link::MsgType>(type), seq, to_bytes(payload)}));
      },
      py::arg("type"), py::arg("seq"), py::arg("payload") = py::bytes());
  m.def(
      "decode_frame",
      [](const py::bytes& data) {
        const auto bytes = to_bytes(data);
        const auto r = link::decode_frame(bytes);
        if (!r.frame) throw py::value_error(std::string(link::to_string(r.error)));
        return py::make_tuple(static_cast<int>(r.frame->type), r.frame->seq, from_bytes(r.frame->payload));
      },
      py::arg("data"));

  m.def(
      "extract_params",
      [](const std::string& pack) {
        py::list out;
        for (const auto& c : io::load_pack(pack).cells) out.append(model_dict(battery::extract_model(c)));
        return out;
      },
      py::arg("pack"));
  m.def(
      "reference_models",
      [] {
        return py::make_tuple(model_dict(battery::extract_model(battery::reference_cell_1())),
                              model_dict(battery::extract_model(battery::reference_cell_2())));
      });
  m.def(
      "discharge_curve",
      [](const std::string& pack, std::size_t cell, double current, double step_ah) {
        const auto cfg = io::load_pack(pack);
        const auto& params = cfg.cells.at(cell);
        py::list out;
        for (const auto& p : battery::discharge_curve(params, current > 0 ? current : params.nominal_current, step_ah))
          out.append(py::make_tuple(p.it_ah, p.voltage_v, p.c_rate));
        return out;
      },
      py::arg("pack"), py::arg("cell") = 0, py::arg("current") = 0.0, py::arg("step_ah") = 0.01);

  m.def("simulate", &run, py::arg("pack"), py::arg("scenario"), py::arg("seed") = 1,
        py::arg("dt") = 0.1, py::arg("horizon") = 5000.0, py::arg("faults") = std::string());

  m.def(
      "verify_store",
      [](const std::filesystem::path& file) {
        const auto loaded = store::load_session(file);
        const auto rep = store::verify_session(loaded);
        py::dict d;
        d["ok"] = rep.ok;
        d["records"] = loaded.rounds.size();
        d["dropped_truncated_tail"] = loaded.dropped_truncated_tail;
        d["message"] = rep.message;
        d["first_bad_seq"] = rep.first_bad_seq ? py::object(py::int_(*rep.first_bad_seq)) : py::none();
        return d;
      },
      py::arg("file"));

  py::register_exception<io::ParseError>(m, "ParseError", PyExc_ValueError);
}
