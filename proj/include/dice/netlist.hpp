#pragma once

#include <string>
#include <vector>

#include "dice/errors.hpp"

namespace dice {

enum class DeviceKind {
    Resistor,
    Capacitor,
    Inductor,
    CurrentSource,
    Nmos,
    Pmos,
    VoltageSupply,
};

bool is_mos(DeviceKind k);
bool is_two_terminal(DeviceKind k);
const char* kind_name(DeviceKind k);

// One parsed card. Terminal order by role:
//   two-terminal (R/C/L/I): {a, b}
//   MOS:                    {drain, gate, source, bulk}
//   voltage supply:         {plus, minus}
struct Device {
    std::string name;
    DeviceKind kind;
    std::vector<std::string> terminals;
    double param = 0.0;
};

// Flat device-level circuit. Nets are kept in first-appearance order.
struct Netlist {
    std::string name;
    std::vector<std::string> nets;
    std::vector<Device> devices;

    int net_index(const std::string& net) const;  // -1 if absent
};

// Parse the SPICE-subset text format. Cards:
//   R/C/L/I name n1 n2 value
//   M name nd ng ns nb NMOS|PMOS value
//   V name n+ n- value
// `*` starts a comment line, values accept SI suffixes (f p n u m k meg g),
// names and nets are case-insensitive and normalized to lower case,
// "gnd" is an alias for net "0".
Netlist parse_netlist(const std::string& text, const std::string& name = "");

// Canonical one-card-per-line form; reparses to a structurally equal Netlist.
std::string serialize_netlist(const Netlist& nl);

bool operator==(const Device& a, const Device& b);
bool operator==(const Netlist& a, const Netlist& b);

// Value formatting/parsing helpers shared with serialization.
double parse_si_value(const std::string& token, int line);
std::string format_double(double v);  // shortest round-trip decimal

}  // namespace dice
