#include "seqmetric/bvh.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace seqmetric {

BvhError::BvhError(std::size_t line, const std::string& what)
    : std::runtime_error("bvh line " + std::to_string(line) + ": " + what), line_(line) {}

namespace {

struct Token {
  std::string text;
  std::size_t line;
};

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

bool parse_number(const std::string& s, double& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size() && std::isfinite(out);
}

class HierarchyParser {
 public:
  HierarchyParser(std::vector<Token> tokens, std::size_t last_line)
      : tokens_(std::move(tokens)), last_line_(last_line) {}

  SkeletonHierarchy parse() {
    expect("HIERARCHY");
    expect("ROOT");
    parse_joint(-1);
    if (pos_ != tokens_.size()) fail(tokens_[pos_].line, "unexpected token '" + tokens_[pos_].text + "'");
    sk_.total_channels = 0;
    for (const Joint& j : sk_.joints) sk_.total_channels += j.channels.size();
    return std::move(sk_);
  }

 private:
  [[noreturn]] void fail(std::size_t line, const std::string& msg) { throw BvhError(line, msg); }

  const Token& next(const char* what) {
    if (pos_ >= tokens_.size()) fail(last_line_, std::string("unexpected end of hierarchy, expected ") + what);
    return tokens_[pos_++];
  }

  void expect(const std::string& word) {
    const Token& t = next(word.c_str());
    if (t.text != word) fail(t.line, "expected '" + word + "', got '" + t.text + "'");
  }

  double number() {
    const Token& t = next("a number");
    double v = 0.0;
    if (!parse_number(t.text, v)) fail(t.line, "expected a number, got '" + t.text + "'");
    return v;
  }

  std::array<double, 3> triple() { return {number(), number(), number()}; }

  void parse_joint(int parent) {
    Joint joint;
    joint.name = next("a joint name").text;
    joint.parent = parent;
    expect("{");
    const int index = static_cast<int>(sk_.joints.size());
    sk_.joints.push_back(joint);
    for (;;) {
      const Token& t = next("'}'");
      if (t.text == "}") return;
      if (t.text == "OFFSET") {
        sk_.joints[index].offset = triple();
      } else if (t.text == "CHANNELS") {
        const Token& nt = next("a channel count");
        double n = 0.0;
        if (!parse_number(nt.text, n) || n < 0 || n != std::floor(n)) fail(nt.line, "bad channel count '" + nt.text + "'");
        for (int i = 0; i < static_cast<int>(n); ++i) {
          const Token& ct = next("a channel name");
          auto ch = channel_from_string(ct.text);
          if (!ch) fail(ct.line, "unsupported channel '" + ct.text + "'");
          sk_.joints[index].channels.push_back(*ch);
        }
      } else if (t.text == "JOINT") {
        parse_joint(index);
      } else if (t.text == "End") {
        expect("Site");
        expect("{");
        expect("OFFSET");
        sk_.joints[index].end_site = triple();
        expect("}");
      } else {
        fail(t.line, "unexpected token '" + t.text + "'");
      }
    }
  }

  std::vector<Token> tokens_;
  std::size_t last_line_;
  std::size_t pos_ = 0;
  SkeletonHierarchy sk_;
};

std::vector<std::string> words(const std::string& line) {
  std::istringstream in(line);
  std::vector<std::string> out;
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

}  // namespace

BvhDocument parse_bvh(const std::string& text) {
  const std::vector<std::string> lines = split_lines(text);
  std::size_t motion_line = lines.size();
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto w = words(lines[i]);
    if (!w.empty() && w[0] == "MOTION") {
      motion_line = i;
      break;
    }
  }
  std::vector<Token> tokens;
  for (std::size_t i = 0; i < motion_line; ++i) {
    for (auto& w : words(lines[i])) tokens.push_back({w, i + 1});
  }
  if (tokens.empty() || tokens[0].text != "HIERARCHY") {
    throw BvhError(tokens.empty() ? 1 : tokens[0].line, "missing HIERARCHY section");
  }
  if (motion_line == lines.size()) throw BvhError(lines.size(), "missing MOTION section");

  BvhDocument doc;
  doc.skeleton = HierarchyParser(std::move(tokens), motion_line).parse();

  // Header lines: "Frames: N" and "Frame Time: t".
  std::size_t i = motion_line + 1;
  auto next_nonempty = [&](std::size_t& at) {
    while (i < lines.size() && words(lines[i]).empty()) ++i;
    if (i >= lines.size()) throw BvhError(lines.size(), "truncated MOTION header");
    at = i + 1;
    return words(lines[i++]);
  };
  std::size_t frames_line = 0, time_line = 0;
  auto fw = next_nonempty(frames_line);
  double declared = 0.0;
  if (fw.size() != 2 || fw[0] != "Frames:" || !parse_number(fw[1], declared) || declared < 0 ||
      declared != std::floor(declared)) {
    throw BvhError(frames_line, "expected 'Frames: <count>'");
  }
  auto tw = next_nonempty(time_line);
  double frame_time = 0.0;
  if (tw.size() != 3 || tw[0] != "Frame" || tw[1] != "Time:" || !parse_number(tw[2], frame_time)) {
    throw BvhError(time_line, "expected 'Frame Time: <seconds>'");
  }
  if (!(frame_time > 0.0)) throw BvhError(time_line, "Frame Time must be positive");

  const std::size_t channels = doc.skeleton.total_channels;
  std::vector<double> values;
  std::size_t rows = 0;
  for (; i < lines.size(); ++i) {
    const auto w = words(lines[i]);
    if (w.empty()) continue;
    if (w.size() != channels) {
      throw BvhError(i + 1, "expected " + std::to_string(channels) + " channel values, got " +
                                std::to_string(w.size()));
    }
    for (const auto& s : w) {
      double v = 0.0;
      if (!parse_number(s, v)) throw BvhError(i + 1, "non-numeric frame value '" + s + "'");
      values.push_back(v);
    }
    ++rows;
  }
  if (rows != static_cast<std::size_t>(declared)) {
    throw BvhError(frames_line, "Frames: " + std::to_string(static_cast<std::size_t>(declared)) +
                                    " declared but " + std::to_string(rows) + " data rows found");
  }
  if (rows == 0) throw BvhError(frames_line, "no frames");

  doc.motion.frames = Array(rows, channels, std::move(values));
  doc.motion.frame_rate_hz = 1.0 / frame_time;
  doc.motion.kind = FeatureKind::RawChannels;
  return doc;
}

BvhDocument load_bvh(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open BVH file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  BvhDocument doc = parse_bvh(ss.str());
  doc.motion.source_id = path;
  return doc;
}

namespace {

void write_joint(std::ostream& out, const SkeletonHierarchy& sk, std::size_t index, int depth) {
  const std::string pad(static_cast<std::size_t>(depth) * 2, ' ');
  const Joint& j = sk.joints[index];
  out << pad << (j.parent < 0 ? "ROOT " : "JOINT ") << j.name << "\n" << pad << "{\n";
  out << pad << "  OFFSET " << j.offset[0] << " " << j.offset[1] << " " << j.offset[2] << "\n";
  out << pad << "  CHANNELS " << j.channels.size();
  for (Channel c : j.channels) out << " " << to_string(c);
  out << "\n";
  for (std::size_t k = index + 1; k < sk.joints.size(); ++k) {
    if (sk.joints[k].parent == static_cast<int>(index)) write_joint(out, sk, k, depth + 1);
  }
  if (j.end_site) {
    const auto& e = *j.end_site;
    out << pad << "  End Site\n" << pad << "  {\n"
        << pad << "    OFFSET " << e[0] << " " << e[1] << " " << e[2] << "\n" << pad << "  }\n";
  }
  out << pad << "}\n";
}

}  // namespace

std::string serialize_bvh(const SkeletonHierarchy& skeleton, const MotionSequence& motion) {
  if (motion.dim() != skeleton.total_channels) {
    throw std::invalid_argument("serialize_bvh: frame width does not match channel count");
  }
  std::ostringstream out;
  out << std::setprecision(17);
  out << "HIERARCHY\n";
  if (!skeleton.joints.empty()) write_joint(out, skeleton, 0, 0);
  out << "MOTION\nFrames: " << motion.length() << "\nFrame Time: " << 1.0 / motion.frame_rate_hz << "\n";
  for (std::size_t t = 0; t < motion.length(); ++t) {
    for (std::size_t c = 0; c < motion.dim(); ++c) out << (c ? " " : "") << motion.frames(t, c);
    out << "\n";
  }
  return out.str();
}

}  // namespace seqmetric
