"""Append-only NDJSON run manifest.

One line per event: run-start (config hash, code version, wall-clock stamp),
job completion or failure, output file registration. Data files themselves
carry no timestamps, so reruns stay byte-comparable; the manifest is the one
place wall-clock information lives. Resume reads completed job keys back and
skips them.
"""

import json
import os
import time


class RunManifest:
    def __init__(self, path):
        self.path = str(path)

    def _append(self, entry):
        line = json.dumps(entry, sort_keys=True)
        with open(self.path, "a", encoding="utf-8") as f:
            f.write(line + "\n")

    def entries(self):
        if not os.path.exists(self.path):
            return []
        out = []
        with open(self.path, "r", encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if line:
                    out.append(json.loads(line))
        return out

    def start_run(self, config_hash, version, command):
        self._append({
            "kind": "run-start",
            "config_hash": config_hash,
            "version": version,
            "command": command,
            "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
        })

    def record_job(self, pipeline, key, status, error=None):
        entry = {"kind": "job", "pipeline": pipeline, "key": list(key),
                 "status": status}
        if error is not None:
            entry["error"] = str(error)
        self._append(entry)

    def record_file(self, path, config_hash):
        self._append({"kind": "file", "path": str(path),
                      "config_hash": config_hash})

    def completed_keys(self, pipeline):
        """Job keys already finished for one pipeline (resume set)."""
        done = set()
        for e in self.entries():
            if e.get("kind") == "job" and e.get("pipeline") == pipeline:
                key = tuple(e["key"])
                if e.get("status") == "done":
                    done.add(key)
                elif key in done:
                    # a later failure supersedes: job must rerun
                    done.discard(key)
        return done

    def files(self):
        return [e["path"] for e in self.entries() if e.get("kind") == "file"]
