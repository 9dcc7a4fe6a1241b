#include <sys/wait.h>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "evdet/dataset.hpp"
#include "evdet/features.hpp"
#include "evdet/pcap.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

fs::path workdir() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "evdet_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

Run run_evdet(const std::string& args, const std::string& env = "") {
  const fs::path log = workdir() / "last.log";
  const std::string cmd = env + (env.empty() ? "" : " ") + std::string(EVDET_CLI_PATH) + " " + args + " > " +
                          log.string() + " 2>&1";
  Run r;
  const int status = std::system(cmd.c_str());
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  r.out = ss.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string w(const std::string& name) { return (workdir() / name).string(); }

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("synth writes a reproducible dataset with every class") {
    const Run a = run_evdet("synth --flows-per-class 1 --seed 5 --out " + w("a.neds"));
    REQUIRE(a.code == 0);
    const Run b = run_evdet("--workers 3 synth --flows-per-class 1 --seed 5 --out " + w("b.neds"));
    REQUIRE(b.code == 0);
    CHECK(slurp(w("a.neds")) == slurp(w("b.neds")));
    const auto ds = evdet::data::read_dataset(w("a.neds"));
    CHECK(ds.size() >= 8);
    for (int n : evdet::data::class_histogram(ds)) CHECK(n >= 1);
    CHECK(a.out.find("TCP_OPT") != std::string::npos);
  }

  TEST_CASE("extract from exported pcaps") {
    REQUIRE(run_evdet("synth --flows-per-class 6 --seed 2 --out " + w("p.neds") + " --pcap-dir " + w("pcaps")).code == 0);
    const Run r = run_evdet("extract --pcap " + w("pcaps/TCP_SEG.pcap") + " --label TCP_SEG --frame 5 --out " + w("seg.neds"));
    REQUIRE(r.code == 0);
    const auto cap = evdet::trace::parse_pcap_file(w("pcaps/TCP_SEG.pcap"));
    std::size_t expected = 0;
    for (const auto& f : cap.flows) expected += evdet::features::window_lengths(f.packets.size(), 5).size();
    const auto ds = evdet::data::read_dataset(w("seg.neds"));
    CHECK(ds.size() == expected);
    for (const auto& s : ds.samples) CHECK(s.label == 4);
  }

  TEST_CASE("extract: frame out of range is a usage error") {
    CHECK(run_evdet("extract --pcap x.pcap --label IP_FRAG --frame 2 --out y.neds").code == 1);
  }

  TEST_CASE("extract: empty pcap warns and succeeds") {
    evdet::trace::write_pcap_file(w("empty.pcap"), {});
    const Run r = run_evdet("extract --pcap " + w("empty.pcap") + " --label IP_OPT --out " + w("none.neds"));
    CHECK(r.code == 0);
    CHECK(r.out.find("warning") != std::string::npos);
    CHECK_FALSE(fs::exists(w("none.neds")));
  }

  TEST_CASE("train then eval prints the confusion matrix in class order") {
    REQUIRE(run_evdet("synth --flows-per-class 30 --seed 1 --out " + w("t.neds")).code == 0);
    const Run t = run_evdet("train --data " + w("t.neds") + " --out " + w("m.blsm") +
                        " --hidden 16 --layers 1 --epochs 2 --lr 0.01 --loss-csv " + w("loss.csv"));
    REQUIRE(t.code == 0);
    CHECK(fs::exists(w("loss.csv")));
    const Run e = run_evdet("eval --data " + w("t.neds") + " --checkpoint " + w("m.blsm") + " --confusion-csv " +
                        w("cm.csv") + " --roc-csv " + w("roc.csv"));
    REQUIRE(e.code == 0);
    const char* order[] = {"IP_OPT", "IP_FRAG", "TCP_CHAFF", "IP_TOS", "TCP_SEG", "IP_TTL", "IP_CHAFF", "TCP_OPT"};
    std::size_t pos = e.out.find("acc(%)");
    REQUIRE(pos != std::string::npos);
    for (const char* name : order) {
      const std::size_t next = e.out.find(std::string("\n") + name, pos);
      CHECK(next != std::string::npos);
      pos = next;
    }
    CHECK(e.out.find("macro accuracy") != std::string::npos);
    CHECK(fs::exists(w("cm.csv")));
    CHECK(fs::exists(w("roc.csv")));
  }

  TEST_CASE("eval with a mismatched class count fails clearly") {
    REQUIRE(run_evdet("synth --flows-per-class 2 --seed 1 --include-clean --out " + w("nine.neds")).code == 0);
    REQUIRE(run_evdet("synth --flows-per-class 2 --seed 1 --out " + w("eight.neds")).code == 0);
    REQUIRE(run_evdet("train --data " + w("eight.neds") + " --out " + w("eight.blsm") + " --hidden 4 --layers 1 --epochs 1 --use-all").code == 0);
    const Run r = run_evdet("eval --data " + w("nine.neds") + " --checkpoint " + w("eight.blsm") + " --use-all");
    CHECK(r.code == 2);
    CHECK(r.out.find("ClassMismatch") != std::string::npos);
  }

  TEST_CASE("config file values, overrides and unknown keys") {
    {
      std::ofstream cfg(w("run.cfg"));
      cfg << "# synth settings\nflows-per-class=1\nseed=5\n";
    }
    REQUIRE(run_evdet("--config " + w("run.cfg") + " synth --out " + w("c.neds")).code == 0);
    CHECK(slurp(w("c.neds")) == slurp(w("a.neds")));
    REQUIRE(run_evdet("synth --out " + w("d.neds") + " --seed 6", "EVDET_CONFIG=" + w("run.cfg")).code == 0);
    CHECK(slurp(w("d.neds")) != slurp(w("a.neds")));
    {
      std::ofstream cfg(w("bad.cfg"));
      cfg << "flows-per-class=1\nflows_per_klass=3\n";
    }
    const Run r = run_evdet("--config " + w("bad.cfg") + " synth --out " + w("e.neds"));
    CHECK(r.code == 1);
    CHECK(r.out.find("flows_per_klass") != std::string::npos);
  }

  TEST_CASE("gradcheck passes") {
    const Run r = run_evdet("gradcheck");
    CHECK(r.code == 0);
    CHECK(r.out.find("PASS") != std::string::npos);
    CHECK(r.out.find("max relative error") != std::string::npos);
  }

  TEST_CASE("divergence maps to the numeric exit code") {
    REQUIRE(run_evdet("synth --flows-per-class 2 --seed 1 --out " + w("div.neds")).code == 0);
    const Run r = run_evdet("train --data " + w("div.neds") + " --out " + w("div.blsm") +
                        " --optimizer gd --lr 1e308 --hidden 4 --layers 1 --use-all");
    CHECK(r.code == 3);
  }

  TEST_CASE("missing input is a data error; unknown subcommand is usage") {
    CHECK(run_evdet("eval --data " + w("nope.neds") + " --checkpoint " + w("nope.blsm")).code == 2);
    CHECK(run_evdet("frobnicate").code == 1);
  }

  TEST_CASE("sweep and bench write CSV") {
    const Run s = run_evdet("sweep --flows-per-class 4 --frames 3,5 --optimizers adam,rmsprop --epochs 1 --hidden 4 --layers 1 --out " + w("sweep.csv"));
    REQUIRE(s.code == 0);
    const std::string csv = slurp(w("sweep.csv"));
    CHECK(csv.find("optimizer,lr,dropout,batch,acc_L3,acc_L5") == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
    const Run b = run_evdet("bench --flows-per-class 4 --batches 10,50 --hidden 4 --layers 1 --out " + w("bench.csv"));
    REQUIRE(b.code == 0);
    CHECK(slurp(w("bench.csv")).find("batch_size,seconds_per_epoch") == 0);
  }
}
