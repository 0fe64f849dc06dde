#include <charconv>
#include <fstream>
#include <sstream>

#include "notifdt/common/binary_io.hpp"
#include "notifdt/common/errors.hpp"
#include "notifdt/pipeline/pipeline.hpp"

namespace notifdt::pipeline {

namespace {

constexpr char kDatasetMagic[5] = "NDTD";

void check_window(const TrajectoryWindow& w, const DatasetHeader& h) {
  auto fail = [&](const std::string& what) {
    throw ShapeError("dataset window (user " + std::to_string(w.user_id) + ", start " +
                     std::to_string(w.start_index) + "): " + what);
  };
  if (w.context_length != h.context_length || w.horizon != h.horizon) fail("T/H disagree with header");
  if (w.steps.size() != h.context_length + h.horizon) fail("step count is not T+H");
  if (w.pad_steps > h.context_length) fail("more pads than context steps");
  for (std::size_t k = 0; k < w.steps.size(); ++k) {
    const WindowStep& s = w.steps[k];
    if (s.pad) continue;
    if (s.step.state.size() != h.state_dim) fail("state width disagrees with header");
    if (s.step.reward.size() != h.reward_dim) fail("reward width disagrees with header");
    if (k < h.context_length && s.rtg.size() != h.reward_dim) fail("missing RTG label on a context step");
  }
}

}  // namespace

void write_dataset(const std::filesystem::path& path, std::span<const TrajectoryWindow> windows,
                   const DatasetHeader& header) {
  DatasetHeader h = header;
  h.count = windows.size();
  for (const auto& w : windows) check_window(w, h);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  io::write_magic(out, kDatasetMagic);
  io::write_le<std::uint32_t>(out, kDatasetVersion);
  io::write_le<std::uint32_t>(out, h.reward_dim);
  io::write_le<std::uint32_t>(out, h.context_length);
  io::write_le<std::uint32_t>(out, h.horizon);
  io::write_le<std::uint32_t>(out, h.state_dim);
  io::write_le<double>(out, h.gamma);
  io::write_le<std::uint64_t>(out, h.count);
  for (const auto& w : windows) {
    io::write_le<std::uint64_t>(out, w.user_id);
    io::write_le<std::int64_t>(out, w.start_index);
    io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(w.pad_steps));
    for (std::size_t k = 0; k < w.steps.size(); ++k) {
      const WindowStep& s = w.steps[k];
      io::write_le<std::uint8_t>(out, s.pad ? 1 : 0);
      io::write_le<std::int64_t>(out, s.pad ? 0 : s.step.timestamp_ms);
      for (std::size_t i = 0; i < h.state_dim; ++i) io::write_le<double>(out, s.pad ? 0.0 : s.step.state[i]);
      io::write_le<std::uint8_t>(out, s.pad ? 0 : s.step.eas.mask());
      io::write_le<std::uint8_t>(out, s.pad ? 0 : static_cast<std::uint8_t>(action_index(s.step.action)));
      io::write_le<std::uint8_t>(out, s.pad ? 0 : s.step.realized);
      io::write_le<std::uint8_t>(out, !s.pad && s.step.explored ? 1 : 0);
      for (std::size_t i = 0; i < h.reward_dim; ++i) io::write_le<double>(out, s.pad ? 0.0 : s.step.reward[i]);
      const bool labeled = !s.pad && k < h.context_length;
      for (std::size_t i = 0; i < h.reward_dim; ++i) io::write_le<double>(out, labeled ? s.rtg[i] : 0.0);
    }
  }
  if (!out) throw IoError("write failed for " + path.string());
}

Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset " + path.string());
  io::expect_magic(in, kDatasetMagic, "dataset");
  const auto version = io::read_le<std::uint32_t>(in);
  if (version != kDatasetVersion) {
    throw FormatError(path.string() + ": unsupported dataset version " + std::to_string(version));
  }
  Dataset d;
  DatasetHeader& h = d.header;
  h.reward_dim = io::read_le<std::uint32_t>(in);
  h.context_length = io::read_le<std::uint32_t>(in);
  h.horizon = io::read_le<std::uint32_t>(in);
  h.state_dim = io::read_le<std::uint32_t>(in);
  h.gamma = io::read_le<double>(in);
  h.count = io::read_le<std::uint64_t>(in);
  const std::size_t n_steps = std::size_t{h.context_length} + h.horizon;
  d.windows.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(h.count, 1u << 20)));
  for (std::uint64_t c = 0; c < h.count; ++c) {
    TrajectoryWindow w;
    w.user_id = io::read_le<std::uint64_t>(in);
    w.start_index = io::read_le<std::int64_t>(in);
    w.pad_steps = io::read_le<std::uint32_t>(in);
    w.context_length = h.context_length;
    w.horizon = h.horizon;
    w.steps.resize(n_steps);
    for (std::size_t k = 0; k < n_steps; ++k) {
      WindowStep& s = w.steps[k];
      s.pad = io::read_le<std::uint8_t>(in) != 0;
      const auto ts = io::read_le<std::int64_t>(in);
      std::vector<double> state(h.state_dim);
      for (auto& v : state) v = io::read_le<double>(in);
      const auto eas = io::read_le<std::uint8_t>(in);
      const auto action = io::read_le<std::uint8_t>(in);
      const auto realized = io::read_le<std::uint8_t>(in);
      const auto explored = io::read_le<std::uint8_t>(in);
      std::vector<double> reward(h.reward_dim), rtg(h.reward_dim);
      for (auto& v : reward) v = io::read_le<double>(in);
      for (auto& v : rtg) v = io::read_le<double>(in);
      if (s.pad) continue;
      if (action >= kNumActions) throw FormatError(path.string() + ": action code out of range");
      s.step.timestamp_ms = ts;
      s.step.state = std::move(state);
      s.step.eas = EligibleActionSet(eas);
      s.step.action = action_from_index(action);
      s.step.realized = realized;
      s.step.explored = explored != 0;
      s.step.reward = std::move(reward);
      if (k < h.context_length) s.rtg = std::move(rtg);
    }
    d.windows.push_back(std::move(w));
  }
  return d;
}

Dataset read_dataset(const std::filesystem::path& path, const DatasetHeader& expect) {
  Dataset d = read_dataset(path);
  const DatasetHeader& h = d.header;
  auto mismatch = [&](const std::string& field, const std::string& got, const std::string& want) {
    throw FormatError(path.string() + ": dataset header " + field + "=" + got + " disagrees with configured " +
                      field + "=" + want);
  };
  if (h.context_length != expect.context_length)
    mismatch("T", std::to_string(h.context_length), std::to_string(expect.context_length));
  if (h.horizon != expect.horizon) mismatch("H", std::to_string(h.horizon), std::to_string(expect.horizon));
  if (h.reward_dim != expect.reward_dim)
    mismatch("n_r", std::to_string(h.reward_dim), std::to_string(expect.reward_dim));
  if (h.state_dim != expect.state_dim)
    mismatch("state_dim", std::to_string(h.state_dim), std::to_string(expect.state_dim));
  if (h.gamma != expect.gamma) mismatch("gamma", std::to_string(h.gamma), std::to_string(expect.gamma));
  return d;
}

// ---------------------------------------------------------------------------
// log export

namespace {

constexpr const char* kLogMagic = "# notifdt-log v1";

void append_double(std::string& out, double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  out.append(buf, res.ptr);
}

template <typename T>
T parse_number(std::string_view s, std::size_t line) {
  T v{};
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw FormatError("log export line " + std::to_string(line) + ": bad number '" + std::string(s) + "'");
  }
  return v;
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace

std::string format_log_export(const InteractionLog& log) {
  std::string out = std::string(kLogMagic) + " reward_dim=" + std::to_string(log.reward_dim) +
                    " state_dim=" + std::to_string(log.state_dim) + " users=" + std::to_string(log.users.size()) +
                    "\n";
  out += "user_id,timestamp_ms,action,eas_mask,explored,realized_mask";
  for (std::size_t i = 0; i < log.state_dim; ++i) out += ",s" + std::to_string(i);
  for (std::size_t i = 0; i < log.reward_dim; ++i) out += ",r" + std::to_string(i);
  out += '\n';
  for (const auto& u : log.users) {
    for (const auto& s : u.steps) {
      out += std::to_string(u.user_id) + ',' + std::to_string(s.timestamp_ms) + ',' +
             std::string(action_name(s.action)) + ',' + std::to_string(s.eas.mask()) + ',' +
             (s.explored ? '1' : '0') + ',' + std::to_string(s.realized);
      for (double v : s.state) {
        out += ',';
        append_double(out, v);
      }
      for (double v : s.reward) {
        out += ',';
        append_double(out, v);
      }
      out += '\n';
    }
  }
  return out;
}

void write_log_export(const std::filesystem::path& path, const InteractionLog& log) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << format_log_export(log);
  if (!out) throw IoError("write failed for " + path.string());
}

InteractionLog parse_log_export(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind(kLogMagic, 0) != 0) {
    throw FormatError("log export: missing '" + std::string(kLogMagic) + "' header");
  }
  InteractionLog log;
  bool have_r = false, have_s = false;
  std::istringstream hdr(line.substr(std::string(kLogMagic).size()));
  std::string kv;
  while (hdr >> kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = kv.substr(0, eq);
    const std::string_view val = std::string_view(kv).substr(eq + 1);
    if (key == "reward_dim") {
      log.reward_dim = parse_number<std::size_t>(val, 1);
      have_r = true;
    } else if (key == "state_dim") {
      log.state_dim = parse_number<std::size_t>(val, 1);
      have_s = true;
    }
  }
  if (!have_r || !have_s) throw FormatError("log export: header lacks reward_dim or state_dim");
  if (!std::getline(in, line)) throw FormatError("log export: missing column header");
  const std::size_t n_cols = 6 + log.state_dim + log.reward_dim;
  if (split_commas(line).size() != n_cols) throw FormatError("log export: column header width mismatch");
  std::size_t line_no = 2;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto f = split_commas(line);
    if (f.size() != n_cols) {
      throw FormatError("log export line " + std::to_string(line_no) + ": expected " + std::to_string(n_cols) +
                        " fields, got " + std::to_string(f.size()));
    }
    const auto uid = parse_number<std::uint64_t>(f[0], line_no);
    if (log.users.empty() || log.users.back().user_id != uid) log.users.push_back(UserLog{uid, {}});
    LoggedStep s;
    s.timestamp_ms = parse_number<std::int64_t>(f[1], line_no);
    try {
      s.action = parse_action(f[2]);
    } catch (const ContractError&) {
      throw FormatError("log export line " + std::to_string(line_no) + ": unknown action '" + std::string(f[2]) +
                        "'");
    }
    s.eas = EligibleActionSet(parse_number<std::uint8_t>(f[3], line_no));
    s.explored = parse_number<int>(f[4], line_no) != 0;
    s.realized = parse_number<std::uint8_t>(f[5], line_no);
    for (std::size_t i = 0; i < log.state_dim; ++i) s.state.push_back(parse_number<double>(f[6 + i], line_no));
    for (std::size_t i = 0; i < log.reward_dim; ++i)
      s.reward.push_back(parse_number<double>(f[6 + log.state_dim + i], line_no));
    log.users.back().steps.push_back(std::move(s));
  }
  log.validate();
  return log;
}

InteractionLog read_log_export(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open log export " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_log_export(ss.str());
}

}  // namespace notifdt::pipeline
