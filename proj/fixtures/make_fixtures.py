#!/usr/bin/env python3
"""Regenerates fixtures/corpus, fixtures/replay and fixtures/providers.json.

The expected reports under fixtures/expected/ are written by hand and are
deliberately not produced here.
"""
import json
import pathlib
import shutil

ROOT = pathlib.Path(__file__).resolve().parent

PROBLEMS = {
    "p1": {
        "manifest": {
            "title": "Pair Sums",
            "tier": 1,
            "category": "io",
            "time_limit_ms": 1000,
            "memory_limit_kb": 65536,
            "statement": "statement.md",
            "solution": "solution.md",
            "input_format": "The first line holds n. Each of the next n lines holds two integers a and b (|a|, |b| <= 10^9).",
            "output_format": "For every pair print a + b on its own line.",
        },
        "statement": "Given n pairs of integers, print the sum of every pair.\n",
        "solution": "Read n, then loop n times reading a and b into long long variables and print a + b followed by a newline.\n",
        "tests": [("1\n3 0\n", "3\n"), ("1\n2 5\n", "7\n"), ("2\n0 0\n4 0\n", "0\n4\n")],
    },
    "p2": {
        "manifest": {
            "title": "Most Frequent Value",
            "tier": 5,
            "category": "arrays",
            "time_limit_ms": 1000,
            "memory_limit_kb": 65536,
            "statement": "statement.md",
            "solution": "solution.md",
            "input_format": "The first line holds t. Each set starts with n followed by n integers in [0, 100].",
            "output_format": "For every set print its most frequent value; break ties by the smaller value.",
        },
        "statement": "You are given t independent sets of numbers. For each set report the value that occurs most often.\n",
        "solution": "Keep a count array f[0..100]. Reset it to zero before every set, count the values, then scan from 0 upwards and keep the first value with the strictly largest count.\n",
        "tests": [("1\n3\n1 2 2\n", "2\n"), ("2\n3\n7 7 7\n3\n1 1 2\n", "7\n1\n"), ("1\n4\n3 3 1 1\n", "1\n")],
    },
    "p3": {
        "manifest": {
            "title": "Stairs",
            "tier": 9,
            "category": "dp",
            "time_limit_ms": 1000,
            "memory_limit_kb": 65536,
            "statement": "statement.md",
            "solution": "solution.md",
            "input_format": "A single integer n (1 <= n <= 100000).",
            "output_format": "The number of ways modulo 1000000007.",
        },
        "statement": "A staircase has n steps. Each move climbs one or two steps. Count the distinct ways to reach the top.\n",
        "solution": "Let dp[1] = 1 and dp[2] = 2, and dp[i] = dp[i-1] + dp[i-2] for i > 2. Take every value modulo 1000000007 to avoid overflow.\n",
        "tests": [("1\n", "1\n"), ("5\n", "8\n"), ("100\n", "782204094\n")],
    },
}

P1_CORRECT = """#include <iostream>
using namespace std;

int main() {
    int n;
    cin >> n;
    for (int i = 0; i < n; i++) {
        long long a, b;
        cin >> a >> b;
        cout << a + b << "\\n";
    }
    return 0;
}
"""

P2_CORRECT = """#include <cstdio>
#include <cstring>

int f[101];

int main() {
    int t;
    scanf("%d", &t);
    while (t--) {
        int n;
        scanf("%d", &n);
        memset(f, 0, sizeof(f));
        for (int i = 0; i < n; i++) {
            int x;
            scanf("%d", &x);
            f[x]++;
        }
        int best = 0;
        for (int v = 1; v <= 100; v++) {
            if (f[v] > f[best]) best = v;
        }
        printf("%d\\n", best);
    }
    return 0;
}
"""

P3_CORRECT = """#include <iostream>
#include <vector>
using namespace std;

const long long MOD = 1000000007;

int main() {
    int n;
    cin >> n;
    vector<long long> dp(n + 2);
    dp[1] = 1;
    dp[2] = 2;
    for (int i = 3; i <= n; i++) dp[i] = (dp[i - 1] + dp[i - 2]) % MOD;
    cout << dp[n] << endl;
    return 0;
}
"""

SUBMISSIONS = {
    "s101": {
        "problem": "p1",
        "student": "st07",
        "incorrect": P1_CORRECT.replace("a + b", "a - b"),
        "corrected": P1_CORRECT,
        "guidance": "Read the statement again: you must print the sum of the pair, but your code subtracts b from a.\n",
    },
    "s102": {
        "problem": "p1",
        "student": "st12",
        "incorrect": """#include <iostream>
using namespace std;

int main() {
    int n;
    cin >> n;
    long long a, b;
    cin >> a >> b;
    cout << a + b << "\\n";
    return 0;
}
""",
        "corrected": P1_CORRECT,
        "guidance": "There are n pairs in the input, not one. Wrap the reading and printing in a loop that runs n times.\n",
    },
    "s201": {
        "problem": "p2",
        "student": "st03",
        "incorrect": P2_CORRECT.replace("        memset(f, 0, sizeof(f));\n", ""),
        "corrected": P2_CORRECT,
        "guidance": "The counts from the previous set are still there when the next set starts. Remember to clear the f array before each set.\n",
    },
    "s202": {
        "problem": "p2",
        "student": "st21",
        "incorrect": P2_CORRECT.replace("f[v] > f[best]", "f[v] >= f[best]"),
        "corrected": P2_CORRECT,
        "guidance": "When two values are equally frequent the smaller one wins. Your comparison lets a later, larger value replace the current best.\n",
    },
    "s301": {
        "problem": "p3",
        "student": "st05",
        "incorrect": P3_CORRECT.replace(" % MOD;", ";"),
        "corrected": P3_CORRECT,
        "guidance": "The answer grows very quickly and overflows long long. Apply the modulo at every step of the recurrence.\n",
    },
    "s302": {
        "problem": "p3",
        "student": "st09",
        "incorrect": P3_CORRECT.replace("dp[2] = 2;", "dp[2] = 1;"),
        "corrected": P3_CORRECT,
        "guidance": "Check your base cases: there are two ways to climb two steps.\n",
    },
}

# s101 repaired by swapping the operands of the sum instead of fixing the operator.
S101_SWAPPED = P1_CORRECT.replace("a + b", "b + a")


def fenced(code):
    return "Here is the repaired program.\n\n```cpp\n" + code + "```\n"


def write(path, text):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def write_corpus():
    root = ROOT / "corpus"
    if root.exists():
        shutil.rmtree(root)
    for pid, p in PROBLEMS.items():
        d = root / pid
        write(d / "manifest.json", json.dumps(p["manifest"], indent=2) + "\n")
        write(d / "statement.md", p["statement"])
        write(d / "solution.md", p["solution"])
        for i, (inp, out) in enumerate(p["tests"], start=1):
            write(d / "tests" / f"{i}.in", inp)
            write(d / "tests" / f"{i}.out", out)
    for sid, s in SUBMISSIONS.items():
        d = root / s["problem"] / "submissions" / sid
        write(d / "code.cpp", s["incorrect"])
        write(d / "corrected.cpp", s["corrected"])
        write(d / "guidance.md", s["guidance"])
        write(d / "meta.json", json.dumps({"student_id": s["student"]}, indent=2) + "\n")


# Per (strategy, submission): one list per trial; each list holds the reply of
# every stage in order. "fix" returns the ground truth, "wrong" echoes the
# incorrect code, "junk" has no code, "swap" is the operand-swapped fix.
W, F, J = "wrong", "fix", "junk"
PLAN = {
    "baseline": {
        "s101": [["swap"], [W], [W], [F], [W]],
        "s102": [[W]] * 5,
        "s201": [[W], [F], [W], [W], [W]],
        "s202": [[W]] * 5,
        "s301": [[W]] * 5,
        "s302": [[W]] * 5,
    },
    "aug-tsf": {sid: [[W]] * 5 for sid in SUBMISSIONS},
    "multiregen": {
        "s101": [[W, F], [F], [W, W, W], [W, W, W], [W, W, W]],
        "s102": [[W, W, F]] + [[W, W, W]] * 4,
        "s201": [[J, W, W]] * 5,
        "s202": [[W, W, W], [W, W, W], [F], [W, W, W], [W, W, W]],
        "s301": [[W, W, W]] * 5,
        "s302": [[W, W, W]] * 5,
    },
    "cref": {
        "s101": [[W, F]] * 5,
        "s102": [[W, W, F]] * 5,
        "s201": [[W, F], [W, F], [W, W, W], [W, W, W], [W, W, W]],
        "s202": [[F], [W, W, W], [W, W, W], [W, W, W], [W, W, W]],
        "s301": [[W, W, W], [W, W, W], [W, W, W], [W, W, F], [W, W, W]],
        "s302": [[W, W, W]] * 5,
    },
}


def reply(kind, sid):
    s = SUBMISSIONS[sid]
    if kind == "fix":
        return {"snippet": f"{sid}-fix"}
    if kind == "wrong":
        return {"snippet": f"{sid}-wrong"}
    if kind == "swap":
        return fenced(S101_SWAPPED)
    return {"snippet": "junk"}


def write_replay():
    snippets = {"junk": "I could not find a problem with this code."}
    for sid, s in SUBMISSIONS.items():
        snippets[f"{sid}-fix"] = fenced(s["corrected"])
        snippets[f"{sid}-wrong"] = fenced(s["incorrect"])
    scripts = {}
    for strategy, per_sub in PLAN.items():
        for sid, trials in per_sub.items():
            for t, stages in enumerate(trials, start=1):
                replies = [reply(k, sid) for k in stages]
                if strategy == "multiregen":
                    for n, r in enumerate(replies, start=1):
                        scripts[f"{sid}/{strategy}/t{t}/s{n}"] = [r]
                else:
                    scripts[f"{sid}/{strategy}/t{t}/s1"] = replies
    bench = {"id": "bench", "snippets": snippets, "scripts": scripts}
    write(ROOT / "replay" / "bench.json", json.dumps(bench, indent=1, sort_keys=True) + "\n")
    # A model that never produces code: every reply of every session is junk.
    mute = {"id": "mute", "scripts": {"": ["I could not find a problem with this code."] * 3}}
    write(ROOT / "replay" / "mute.json", json.dumps(mute, indent=1) + "\n")
    providers = {
        "providers": {
            "replay:bench": {"kind": "replay", "scripts": "replay/bench.json"},
            "replay:mute": {"kind": "replay", "scripts": "replay/mute.json"},
        }
    }
    write(ROOT / "providers.json", json.dumps(providers, indent=2) + "\n")


if __name__ == "__main__":
    write_corpus()
    write_replay()
