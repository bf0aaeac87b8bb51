#include "dice/netlist.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <charconv>
#include <cstdlib>
#include <sstream>
#include <unordered_set>

namespace dice {

bool is_mos(DeviceKind k) { return k == DeviceKind::Nmos || k == DeviceKind::Pmos; }

bool is_two_terminal(DeviceKind k) {
    switch (k) {
        case DeviceKind::Resistor:
        case DeviceKind::Capacitor:
        case DeviceKind::Inductor:
        case DeviceKind::CurrentSource:
            return true;
        default:
            return false;
    }
}

const char* kind_name(DeviceKind k) {
    switch (k) {
        case DeviceKind::Resistor: return "resistor";
        case DeviceKind::Capacitor: return "capacitor";
        case DeviceKind::Inductor: return "inductor";
        case DeviceKind::CurrentSource: return "current_source";
        case DeviceKind::Nmos: return "nmos";
        case DeviceKind::Pmos: return "pmos";
        case DeviceKind::VoltageSupply: return "voltage_supply";
    }
    return "?";
}

int Netlist::net_index(const std::string& net) const {
    for (std::size_t i = 0; i < nets.size(); ++i) {
        if (nets[i] == net) return static_cast<int>(i);
    }
    return -1;
}

namespace {

std::string to_lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

std::string normalize_net(std::string s) {
    s = to_lower(std::move(s));
    if (s == "gnd") return "0";
    return s;
}

std::vector<std::string> split_ws(const std::string& line) {
    std::vector<std::string> out;
    std::istringstream iss(line);
    std::string tok;
    while (iss >> tok) out.push_back(tok);
    return out;
}

}  // namespace

double parse_si_value(const std::string& token, int line) {
    const char* begin = token.c_str();
    char* end = nullptr;
    const double base = std::strtod(begin, &end);
    if (end == begin) throw SyntaxError(line, "bad numeric value '" + token + "'");
    std::string suffix = to_lower(std::string(end));
    if (suffix.empty()) return base;
    double scale;
    if (suffix == "f") scale = 1e-15;
    else if (suffix == "p") scale = 1e-12;
    else if (suffix == "n") scale = 1e-9;
    else if (suffix == "u") scale = 1e-6;
    else if (suffix == "m") scale = 1e-3;
    else if (suffix == "k") scale = 1e3;
    else if (suffix == "meg") scale = 1e6;
    else if (suffix == "g") scale = 1e9;
    else throw SyntaxError(line, "unknown SI suffix '" + suffix + "'");
    return base * scale;
}

std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

Netlist parse_netlist(const std::string& text, const std::string& name) {
    Netlist nl;
    nl.name = name;
    std::unordered_set<std::string> device_names;
    std::unordered_set<std::string> seen_nets;

    auto intern_net = [&](const std::string& raw) {
        std::string net = normalize_net(raw);
        if (!seen_nets.count(net)) {
            seen_nets.insert(net);
            nl.nets.push_back(net);
        }
        return net;
    };

    std::istringstream stream(text);
    std::string raw_line;
    int line_no = 0;
    while (std::getline(stream, raw_line)) {
        ++line_no;
        if (!raw_line.empty() && raw_line.back() == '\r') raw_line.pop_back();
        std::string line = raw_line;
        if (line.empty()) continue;
        if (line[0] == '*') continue;
        if (line[0] == '.') {
            throw SyntaxError(line_no, "control cards and subcircuits are not supported: '" +
                                           split_ws(line)[0] + "'");
        }
        const auto tok = split_ws(line);
        if (tok.empty()) continue;

        const std::string dev_name = to_lower(tok[0]);
        if (device_names.count(dev_name)) throw DuplicateDevice(dev_name);

        Device dev;
        dev.name = dev_name;
        const char lead = static_cast<char>(std::tolower(static_cast<unsigned char>(tok[0][0])));
        switch (lead) {
            case 'r': dev.kind = DeviceKind::Resistor; break;
            case 'c': dev.kind = DeviceKind::Capacitor; break;
            case 'l': dev.kind = DeviceKind::Inductor; break;
            case 'i': dev.kind = DeviceKind::CurrentSource; break;
            case 'm': dev.kind = DeviceKind::Nmos; break;  // refined by model token
            case 'v': dev.kind = DeviceKind::VoltageSupply; break;
            default:
                throw SyntaxError(line_no, "unknown card type '" + tok[0] + "'");
        }

        if (dev.kind == DeviceKind::Nmos) {  // MOS card
            if (tok.size() != 7) throw SyntaxError(line_no, "MOS card needs 7 fields");
            const std::string model = to_lower(tok[5]);
            if (model == "nmos") dev.kind = DeviceKind::Nmos;
            else if (model == "pmos") dev.kind = DeviceKind::Pmos;
            else throw UnknownModel(tok[5]);
            for (int i = 1; i <= 4; ++i) dev.terminals.push_back(intern_net(tok[i]));
            dev.param = parse_si_value(tok[6], line_no);
        } else {
            if (tok.size() != 4) throw SyntaxError(line_no, "two-terminal card needs 4 fields");
            dev.terminals.push_back(intern_net(tok[1]));
            dev.terminals.push_back(intern_net(tok[2]));
            dev.param = parse_si_value(tok[3], line_no);
        }

        const bool allow_zero = dev.kind == DeviceKind::VoltageSupply;
        if (!std::isfinite(dev.param) || dev.param < 0.0 || (!allow_zero && dev.param == 0.0)) {
            throw NonPositiveParam(dev.name);
        }

        device_names.insert(dev_name);
        nl.devices.push_back(std::move(dev));
    }
    return nl;
}

std::string serialize_netlist(const Netlist& nl) {
    std::string out;
    for (const auto& d : nl.devices) {
        out += d.name;
        for (const auto& t : d.terminals) {
            // gate/drain etc. come right after the name; MOS model token goes
            // before the value.
            out += ' ';
            out += t;
        }
        if (is_mos(d.kind)) {
            out += d.kind == DeviceKind::Nmos ? " NMOS" : " PMOS";
        }
        out += ' ';
        out += format_double(d.param);
        out += '\n';
    }
    return out;
}

bool operator==(const Device& a, const Device& b) {
    return a.name == b.name && a.kind == b.kind && a.terminals == b.terminals &&
           a.param == b.param;
}

bool operator==(const Netlist& a, const Netlist& b) {
    return a.nets == b.nets && a.devices == b.devices;
}

}  // namespace dice
