"""Stage-wise correctness evaluation of candidate Chisel code.

Each job gets an isolated working directory; the compile, elaborate, and
simulate stages run as subprocesses with per-stage timeouts (process-tree
kill on expiry). Stage commands are templates so any Scala build tool or
simulator can be dropped in, and test runs use fake scripted toolchains.
Metrics: the unbiased Pass@k estimator and the syntactic-pass rate.
"""

from __future__ import annotations

import enum
import json
import logging
import math
from fractions import Fraction
import os
import re
import shlex
import shutil
import signal
import subprocess
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

logger = logging.getLogger(__name__)

_FENCED_RE = re.compile(r"```(?:scala|chisel)?\s*\n(.*?)```", re.DOTALL)
_MODULE_CLASS_RE = re.compile(r"\bclass\s+(\w+)[^\n]*\bextends\b[^\n]*\bModule\b")


class Stage(str, enum.Enum):
    COMPILE = "compile"
    ELABORATE = "elaborate"
    SIMULATE = "simulate"


class StageStatus(str, enum.Enum):
    PASS = "pass"
    FAIL = "fail"
    TIMEOUT = "timeout"
    TOOL_MISSING = "tool_missing"


@dataclass(frozen=True)
class StageVerdict:
    stage: Stage
    status: StageStatus
    log_excerpt: str = ""
    wall_time_s: float = 0.0

    def as_dict(self) -> dict:
        return {
            "stage": self.stage.value,
            "status": self.status.value,
            "log_excerpt": self.log_excerpt,
            "wall_time_s": round(self.wall_time_s, 3),
        }


@dataclass(frozen=True)
class EvalJob:
    problem_id: str
    attempt_index: int
    chisel_code: str
    testbench: Optional[str] = None
    top_module: Optional[str] = None
    compile_timeout_s: float = 300.0
    elaborate_timeout_s: float = 120.0
    simulate_timeout_s: float = 120.0


@dataclass
class ToolchainConfig:
    """Command templates per stage. Placeholders: {workdir}, {code_file},
    {top}, {sv_file}, {tb_file}. Empty template disables the stage."""

    compile_cmd: str = "sbt -batch compile"
    elaborate_cmd: str = "sbt -batch 'runMain forge.Elaborate --top {top} --out {sv_file}'"
    simulate_cmd: str = ""
    harness_dir: Optional[str] = None  # template project copied per job
    code_slot: str = "src/main/scala/Candidate.scala"
    pass_sentinel: str = "TEST PASSED"


@dataclass
class ProblemResult:
    problem_id: str
    n: int = 0
    c_syntax: int = 0
    c_functional: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.c_functional <= self.c_syntax <= self.n:
            raise ValueError("need 0 <= c_functional <= c_syntax <= n")


def extract_code(completion: str) -> str:
    """Last fenced Scala/Chisel block, or the raw text when unfenced."""
    blocks = _FENCED_RE.findall(completion)
    return blocks[-1].strip() if blocks else completion.strip()


def detect_top_module(code: str) -> Optional[str]:
    """Last class extending Module; declaration order breaks ambiguity."""
    names = _MODULE_CLASS_RE.findall(code)
    if not names:
        return None
    if len(names) > 1:
        logger.warning("multiple Module classes %s; using last-declared %s", names, names[-1])
    return names[-1]


def _run_stage(
    stage: Stage, cmd: str, cwd: Path, timeout_s: float, subst: Dict[str, str]
) -> StageVerdict:
    argv = [a.format(**subst) for a in shlex.split(cmd)]
    start = time.monotonic()
    try:
        proc = subprocess.Popen(
            argv,
            cwd=str(cwd),
            stdout=subprocess.PIPE,
            stderr=subprocess.STDOUT,
            text=True,
            start_new_session=True,
        )
    except FileNotFoundError:
        return StageVerdict(stage, StageStatus.TOOL_MISSING, f"not found: {argv[0]}")
    try:
        out, _ = proc.communicate(timeout=timeout_s)
    except subprocess.TimeoutExpired:
        try:
            os.killpg(proc.pid, signal.SIGKILL)
        except ProcessLookupError:
            pass
        proc.wait()
        return StageVerdict(
            stage, StageStatus.TIMEOUT, "killed on timeout", time.monotonic() - start
        )
    wall = time.monotonic() - start
    excerpt = (out or "")[-2000:]
    status = StageStatus.PASS if proc.returncode == 0 else StageStatus.FAIL
    return StageVerdict(stage, status, excerpt, wall)


def run_job(job: EvalJob, toolchain: ToolchainConfig, workdir: Optional[Path] = None) -> List[StageVerdict]:
    """Run the compile -> elaborate -> simulate chain for one candidate.

    Verdicts form a prefix chain: a stage only runs after the previous
    one passed. Simulation runs only when a testbench is supplied.
    """
    owns_dir = workdir is None
    if owns_dir:
        workdir = Path(tempfile.mkdtemp(prefix=f"forge-{job.problem_id}-{job.attempt_index}-"))
    workdir = Path(workdir)
    try:
        if toolchain.harness_dir:
            shutil.copytree(toolchain.harness_dir, workdir, dirs_exist_ok=True)
        code_file = workdir / toolchain.code_slot
        code_file.parent.mkdir(parents=True, exist_ok=True)
        code_file.write_text(job.chisel_code, encoding="utf-8")
        top = job.top_module or detect_top_module(job.chisel_code) or "Top"
        sv_file = workdir / f"{top}.sv"
        tb_file = workdir / "testbench.sv"
        if job.testbench:
            tb_file.write_text(job.testbench, encoding="utf-8")
        subst = {
            "workdir": str(workdir),
            "code_file": str(code_file),
            "top": top,
            "sv_file": str(sv_file),
            "tb_file": str(tb_file),
        }

        verdicts: List[StageVerdict] = []
        v = _run_stage(Stage.COMPILE, toolchain.compile_cmd, workdir, job.compile_timeout_s, subst)
        verdicts.append(v)
        if v.status is not StageStatus.PASS:
            return verdicts

        v = _run_stage(
            Stage.ELABORATE, toolchain.elaborate_cmd, workdir, job.elaborate_timeout_s, subst
        )
        if v.status is StageStatus.PASS:
            if not (sv_file.exists() and f"module {top}" in sv_file.read_text(encoding="utf-8")):
                v = StageVerdict(
                    Stage.ELABORATE, StageStatus.FAIL, "emitted SV missing top module", v.wall_time_s
                )
        verdicts.append(v)
        if v.status is not StageStatus.PASS:
            return verdicts

        if job.testbench and toolchain.simulate_cmd:
            v = _run_stage(
                Stage.SIMULATE, toolchain.simulate_cmd, workdir, job.simulate_timeout_s, subst
            )
            if v.status is StageStatus.PASS and toolchain.pass_sentinel not in v.log_excerpt:
                v = StageVerdict(
                    Stage.SIMULATE, StageStatus.FAIL, "pass sentinel not found", v.wall_time_s
                )
            verdicts.append(v)
        return verdicts
    finally:
        if owns_dir:
            shutil.rmtree(workdir, ignore_errors=True)


def pass_at_k(n: int, c: int, k: int) -> float:
    """Unbiased estimator: 1 - C(n-c, k) / C(n, k).

    Computed in exact integer arithmetic (math.comb), so it is exact up
    to the final float conversion for any practical n.
    """
    if not 0 <= c <= n:
        raise ValueError("need 0 <= c <= n")
    if not 1 <= k <= n:
        raise ValueError("need 1 <= k <= n")
    if n - c < k:
        return 1.0
    # exact rational value, rounded once on conversion; no float overflow
    # even for very large binomials
    return float(1 - Fraction(math.comb(n - c, k), math.comb(n, k)))


@dataclass
class EvalReport:
    pass_at_k: Dict[int, float]
    syn_percent: float
    n_problems: int
    n_per_problem: Dict[str, int]
    syn_rule: str = "elaborate-pass"

    def as_dict(self) -> dict:
        return {
            "pass_at_k": {str(k): v for k, v in self.pass_at_k.items()},
            "syn_percent": self.syn_percent,
            "n_problems": self.n_problems,
            "n_per_problem": self.n_per_problem,
            "syn_rule": self.syn_rule,
        }

    def render(self) -> str:
        cols = [f"P@{k}" for k in sorted(self.pass_at_k)] + ["Syn(%)"]
        vals = [f"{self.pass_at_k[k] * 100:.2f}" for k in sorted(self.pass_at_k)] + [
            f"{self.syn_percent:.2f}"
        ]
        widths = [max(len(c), len(v)) for c, v in zip(cols, vals)]
        header = "  ".join(c.rjust(w) for c, w in zip(cols, widths))
        row = "  ".join(v.rjust(w) for v, w in zip(vals, widths))
        return (
            f"# syntactic-correctness rule: {self.syn_rule}; "
            f"problems: {self.n_problems}\n{header}\n{row}"
        )


def aggregate(results: Sequence[ProblemResult], ks: Sequence[int]) -> EvalReport:
    """Mean per-problem Pass@k over functional correctness plus the
    pooled syntactic-pass percentage."""
    if not results:
        raise ValueError("no results to aggregate")
    for r in results:
        for k in ks:
            if r.n < k:
                raise ValueError(f"problem {r.problem_id}: n={r.n} < k={k}")
    pk = {
        k: sum(pass_at_k(r.n, r.c_functional, k) for r in results) / len(results) for k in ks
    }
    total_n = sum(r.n for r in results)
    syn = 100.0 * sum(r.c_syntax for r in results) / total_n
    return EvalReport(
        pass_at_k=pk,
        syn_percent=syn,
        n_problems=len(results),
        n_per_problem={r.problem_id: r.n for r in results},
    )


def results_from_verdicts(
    verdict_map: Dict[Tuple[str, int], Sequence[StageVerdict]]
) -> List[ProblemResult]:
    """Fold per-attempt verdict chains into per-problem counts.

    Syntactic pass = elaborate stage passed; functional pass = simulate
    stage passed.
    """
    by_problem: Dict[str, List[Sequence[StageVerdict]]] = {}
    for (pid, _idx), verdicts in sorted(verdict_map.items()):
        by_problem.setdefault(pid, []).append(verdicts)
    out = []
    for pid, chains in by_problem.items():
        n = len(chains)
        c_syn = sum(
            1
            for ch in chains
            if any(v.stage is Stage.ELABORATE and v.status is StageStatus.PASS for v in ch)
        )
        c_fun = sum(
            1
            for ch in chains
            if any(v.stage is Stage.SIMULATE and v.status is StageStatus.PASS for v in ch)
        )
        out.append(ProblemResult(problem_id=pid, n=n, c_syntax=c_syn, c_functional=c_fun))
    return out


def run_batch(
    jobs: Sequence[EvalJob], toolchain: ToolchainConfig, workers: int = 4
) -> Dict[Tuple[str, int], List[StageVerdict]]:
    """Run jobs in a bounded worker pool; each worker owns its directory."""
    keys = [(j.problem_id, j.attempt_index) for j in jobs]
    if len(set(keys)) != len(keys):
        raise ValueError("duplicate (problem_id, attempt_index) in batch")

    def one(job: EvalJob) -> List[StageVerdict]:
        return run_job(job, toolchain)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        verdicts = list(pool.map(one, jobs))
    return dict(zip(keys, verdicts))


def jobs_from_jsonl(path: str | Path, timeouts: Optional[dict] = None) -> List[EvalJob]:
    """Load {problem_id, prompt, completions:[...], testbench?, top_module?}
    records into one job per completion."""
    timeouts = timeouts or {}
    jobs = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            for idx, completion in enumerate(rec["completions"]):
                jobs.append(
                    EvalJob(
                        problem_id=rec["problem_id"],
                        attempt_index=idx,
                        chisel_code=extract_code(completion),
                        testbench=rec.get("testbench"),
                        top_module=rec.get("top_module"),
                        **timeouts,
                    )
                )
    return jobs
