"""
Disaggregation Run Browser
A Streamlit viewer for the run directories written by `disagg.py train`

    streamlit run app.py

Read-only: it lists runs under a root folder and shows their manifests,
objective traces, depth sweeps and evaluation reports as tables.
"""

import json
from pathlib import Path
from typing import Any, Dict, List, Optional

import pandas as pd
import streamlit as st

DEFAULT_RUNS_DIR = "runs"
DOWNLOADABLE = [
    "model.json",
    "manifest.json",
    "objective_trace.csv",
    "depth_sweep.csv",
    "eval/report.json",
    "eval/report.csv",
    "eval/per_appliance.csv",
]


def initialize_session_state():
    """Initialize session state variables"""
    if "current_page" not in st.session_state:
        st.session_state.current_page = "home"
    if "runs_root" not in st.session_state:
        st.session_state.runs_root = DEFAULT_RUNS_DIR
    if "selected_run" not in st.session_state:
        st.session_state.selected_run = None


# ============= RUN FILES =============

def list_runs(root: Path) -> List[Path]:
    """Run directories (those holding a manifest.json) below root, sorted by path"""
    if not root.is_dir():
        return []
    return sorted(p.parent for p in root.rglob("manifest.json"))


def load_manifest(run_dir: Path) -> Optional[Dict[str, Any]]:
    try:
        with open(run_dir / "manifest.json", "r", encoding="utf-8") as f:
            return json.load(f)
    except (OSError, json.JSONDecodeError):
        return None


def load_table(path: Path) -> Optional[pd.DataFrame]:
    if not path.is_file():
        return None
    try:
        return pd.read_csv(path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError):
        return None


def summarize_runs(root: Path) -> pd.DataFrame:
    """One row per run for the overview table"""
    rows = []
    for run_dir in list_runs(root):
        manifest = load_manifest(run_dir) or {}
        rows.append(
            {
                "run": str(run_dir.relative_to(root)) if run_dir != root else ".",
                "model": manifest.get("model_kind"),
                "layers": "-".join(str(k) for k in manifest.get("layer_sizes") or []),
                "status": manifest.get("status", "unreadable"),
                "iterations": manifest.get("iterations"),
                "final objective": manifest.get("final_objective"),
                "seed": manifest.get("seed"),
                "config hash": (manifest.get("config_hash") or "")[:12],
            }
        )
    return pd.DataFrame(rows)


def load_report(run_dir: Path) -> Optional[Dict[str, Any]]:
    """Latest eval report next to the model, if `disagg.py eval` has been run"""
    path = run_dir / "eval" / "report.json"
    if not path.is_file():
        return None
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except (OSError, json.JSONDecodeError):
        return None


# ============= PAGE FUNCTIONS =============

def home_page():
    """List every run under the chosen root folder"""
    st.title("⚡ Disaggregation Runs")
    root_input = st.text_input("Runs folder", value=st.session_state.runs_root)
    st.session_state.runs_root = root_input
    root = Path(root_input)

    if not root.is_dir():
        st.warning(f"Folder not found: {root}")
        return

    runs = list_runs(root)
    if not runs:
        st.info("📝 No runs found. Train one with `python disagg.py train --config ...`")
        return

    st.subheader(f"📂 Runs ({len(runs)})")
    st.dataframe(summarize_runs(root), use_container_width=True, hide_index=True)
    st.markdown("---")

    for run_dir in runs:
        manifest = load_manifest(run_dir) or {}
        col1, col2 = st.columns([4, 1])
        with col1:
            icon = "✅" if manifest.get("status") == "ok" else "❌"
            st.markdown(f"**{icon} {run_dir}**")
            st.caption(f"{manifest.get('model_kind', '?')} | seed {manifest.get('seed', '?')}")
        with col2:
            if st.button("🔍 Open", key=f"open_{run_dir}", use_container_width=True):
                st.session_state.selected_run = str(run_dir)
                st.session_state.current_page = "run"
                st.rerun()


def run_page():
    """Manifest, trace, sweep and evaluation tables for one run"""
    run_dir = Path(st.session_state.selected_run or ".")
    manifest = load_manifest(run_dir)
    if manifest is None:
        st.error(f"Cannot read {run_dir / 'manifest.json'}")
        return

    st.title(f"📊 {run_dir.name}")
    if manifest.get("status") != "ok":
        st.error(
            f"Training failed at iteration {manifest.get('failure_iteration')}: "
            f"{manifest.get('failure_message')}"
        )

    col1, col2, col3 = st.columns(3)
    col1.metric("Model", manifest.get("model_kind", "?"))
    col2.metric("Iterations", manifest.get("iterations") or "-")
    final = manifest.get("final_objective")
    col3.metric("Final objective", f"{final:.6g}" if final is not None else "-")

    with st.expander("Manifest", expanded=False):
        st.json(manifest)

    report = load_report(run_dir)
    st.subheader("Evaluation")
    if report is None:
        st.info(f"No report yet. Run `python disagg.py eval --model {run_dir / 'model.json'} --data {run_dir / 'test'}`")
    else:
        col1, col2, col3 = st.columns(3)
        col1.metric("Macro F1", f"{report['macro_f1']:.4f}")
        col2.metric("Micro F1", f"{report['micro_f1']:.4f}")
        energy = report.get("energy_error")
        col3.metric("Energy error", f"{energy:.4f}" if energy is not None else "n/a")
        if report.get("vacuous_labels"):
            st.warning(f"Vacuous labels (never present, never predicted): {', '.join(report['vacuous_labels'])}")
        per_appliance = load_table(run_dir / "eval" / "per_appliance.csv")
        if per_appliance is not None:
            st.dataframe(per_appliance, use_container_width=True, hide_index=True)

    sweep = load_table(run_dir / "depth_sweep.csv")
    if sweep is not None:
        st.subheader("Depth sweep")
        st.dataframe(sweep, use_container_width=True, hide_index=True)

    trace = load_table(run_dir / "objective_trace.csv")
    if trace is not None:
        st.subheader("Objective trace")
        st.dataframe(trace, use_container_width=True, hide_index=True)

    st.subheader("📥 Downloads")
    for name in DOWNLOADABLE:
        path = run_dir / name
        if path.is_file():
            st.download_button(
                f"Download {name}",
                data=path.read_bytes(),
                file_name=path.name,
                key=f"download_{name}",
            )


def main():
    """Main application entry point"""
    st.set_page_config(
        page_title="Disaggregation Run Browser",
        page_icon="⚡",
        layout="wide",
        initial_sidebar_state="expanded",
    )
    initialize_session_state()

    with st.sidebar:
        st.markdown("# ⚡ Run Browser")
        st.markdown("---")
        if st.session_state.current_page != "home":
            if st.button("🏠 Home", use_container_width=True):
                st.session_state.current_page = "home"
                st.rerun()
        if st.session_state.selected_run:
            st.markdown("**Current run:**")
            st.info(st.session_state.selected_run)
        st.markdown("---")
        st.markdown("### About")
        st.markdown("""
        Browses output of `disagg.py`:
        - manifests and objective traces
        - depth sweeps
        - evaluation reports per appliance
        """)

    if st.session_state.current_page == "run":
        run_page()
    else:
        home_page()


if __name__ == "__main__":
    main()
