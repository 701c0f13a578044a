#!/usr/bin/env python3
"""Independent recount over the fixture corpus.

Reads only the fixture files (speech texts, scripted model replies, scripted
review decisions) and writes the expected outputs under fixtures/oracle/.
Nothing here is shared with the Rust implementation.
"""

import hashlib
import json
import re
from collections import Counter, defaultdict
from decimal import Decimal, ROUND_HALF_UP
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
OUT = ROOT / "oracle"

REPORT_TASKS = ["sentiment", "topic", "polarization", "populism", "stance"]
CORRECTIVE = {"zero_low": 0.0, "medium": 0.6, "high": 0.9}
POLICY = {
    "stance": [("journalist", 2)],
    "topic": [("journalist", 2)],
    "sentiment": [("journalist", 1), ("political_scientist", 1)],
    "polarization": [("journalist", 1), ("political_scientist", 1)],
    "populism": [("journalist", 1), ("political_scientist", 1)],
    "ner": [("journalist", 1)],
}
ALL_TASKS = ["stance", "topic", "sentiment", "polarization", "populism", "ner"]


def cents(x):
    return int(Decimal(repr(x)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP) * 100)


def sentiment_band(x):
    c = cents(x)
    if c <= -34:
        return "negative"
    if c >= 34:
        return "positive"
    return "neutral"


def intensity_band(x):
    c = cents(x)
    if c <= 50:
        return "zero_low"
    if c >= 81:
        return "high"
    return "medium"


def segment(body):
    out, cur = [], []
    for line in body.split("\n"):
        if line.strip() == "":
            if cur:
                out.append("\n".join(cur).strip())
                cur = []
        else:
            cur.append(line)
    if cur:
        out.append("\n".join(cur).strip())
    return [s for s in out if s]


def parse_reply(text):
    start, end = text.index("{"), text.rindex("}")
    return json.loads(text[start:end + 1])


def will_count(text):
    return len(re.findall(r"\bwill\b", text, flags=re.IGNORECASE))


def main():
    OUT.mkdir(exist_ok=True)
    speeches_dir = ROOT / "speeches"
    manifest = json.loads((speeches_dir / "manifest.json").read_text())
    reviewers = json.loads((speeches_dir / "reviewers.json").read_text())

    replies = {}
    for line in (ROOT / "stub_responses.jsonl").read_text().splitlines():
        r = json.loads(line)
        replies[(r["task"], r["text_sha256"])] = parse_reply(r["response"])

    decisions = defaultdict(dict)  # ref -> reviewer -> last decision
    for line in (ROOT / "decisions.jsonl").read_text().splitlines():
        d = json.loads(line)
        ref = (d["speech_id"], d["paragraph_index"], d["task"])
        decisions[ref][d["reviewer_id"]] = d
    role_of = {r["id"]: r["role"] for r in reviewers}

    def assigned(role, k, p):
        pool = sorted(r["id"] for r in reviewers if r["role"] == role)
        return [pool[(p + j) % len(pool)] for j in range(k)]

    speeches = {}
    word_counts = {}
    for rec in manifest:
        body = (speeches_dir / f"{rec['id']}.txt").read_text(encoding="utf-8")
        paras = segment(body)
        speeches[rec["id"]] = (rec, paras)
        word_counts[rec["id"]] = [len(p.split()) for p in paras]

    # validated entries: (sid, p, task) -> dict
    validated = {}
    queue_count = Counter()
    for sid, (rec, paras) in speeches.items():
        for p, text in enumerate(paras):
            key = hashlib.sha256(text.encode("utf-8")).hexdigest()
            for task in ALL_TASKS:
                reply = replies[(task, key)]
                if task == "stance":
                    machine = reply["stance"]
                elif task == "topic":
                    machine = reply["topic"]
                elif task == "ner":
                    machine = reply["entities"]
                else:
                    machine = reply["score"]
                revs = []
                for role, k in POLICY[task]:
                    revs += assigned(role, k, p)
                queue_count[task] += len(revs)
                decs = decisions[(sid, p, task)]
                admin = [d for rid, d in decs.items() if role_of[rid] == "admin"]
                if admin:
                    ruling = admin[-1]
                else:
                    eff = [decs[r] for r in revs]
                    verdicts = {d["verdict"] for d in eff}
                    if verdicts == {"accept"}:
                        ruling = eff[0]
                    elif verdicts == {"correct"} and len({json.dumps(d["corrected_value"], sort_keys=True) for d in eff}) == 1:
                        ruling = eff[0]
                    else:
                        raise SystemExit(f"unresolved disagreement at {(sid, p, task)}")
                if task == "sentiment":
                    machine_cat = sentiment_band(machine)
                elif task in ("polarization", "populism"):
                    machine_cat = intensity_band(machine)
                else:
                    machine_cat = machine
                if ruling["verdict"] == "accept":
                    final, corrected, human_cat = machine, False, machine_cat
                else:
                    cv = ruling["corrected_value"]
                    corrected, human_cat = True, cv
                    if task == "sentiment":
                        final = None
                    elif task in ("polarization", "populism"):
                        final = CORRECTIVE[cv]
                    else:
                        final = cv
                validated[(sid, p, task)] = {
                    "final": final, "was_corrected": corrected, "human_category": human_cat,
                }

    # accuracy report over the whole fixture corpus
    rows = []
    for task in REPORT_TASKS:
        entries = [v for (sid, p, t), v in validated.items() if t == task]
        n = len(entries)
        unchanged = sum(1 for v in entries if not v["was_corrected"])
        counts = Counter(v["human_category"] for v in entries)
        best = max(counts.values())
        modal = min(c for c, k in counts.items() if k == best)
        rows.append({"task": task, "n": n, "unchanged": unchanged, "most_prevalent_category": modal,
                     "modal_count": best})
    (OUT / "accuracy.json").write_text(json.dumps({"rows": rows}, indent=2) + "\n")
    with open(OUT / "accuracy.csv", "w") as f:
        f.write("task,most_prevalent_category,baseline_pct,accuracy_pct,n\n")
        for r in rows:
            baseline = r["modal_count"] / r["n"]
            acc = r["unchanged"] / r["n"]
            f.write(f"{r['task']},{r['most_prevalent_category']},{baseline * 100:.1f},{acc * 100:.1f},{r['n']}\n")

    # s001 validated set
    s001 = []
    for p in range(len(speeches["s001"][1])):
        for task in ALL_TASKS:
            v = validated[("s001", p, task)]
            s001.append({"paragraph_index": p, "task": task, "final_value": v["final"],
                         "was_corrected": v["was_corrected"]})
    (OUT / "s001_validated.json").write_text(json.dumps(s001, indent=2) + "\n")

    def paragraph_rows(sids):
        for sid in sids:
            rec, paras = speeches[sid]
            for p, text in enumerate(paras):
                yield sid, p, text, word_counts[sid][p]

    def topic_shares(sids, agenda_only):
        num, den = defaultdict(int), 0
        for sid, p, _, wc in paragraph_rows(sids):
            if agenda_only and validated[(sid, p, "stance")]["final"] != "political_agenda":
                continue
            num[validated[(sid, p, "topic")]["final"]] += wc
            den += wc
        if den == 0:
            return None
        return {t: w / den for t, w in sorted(num.items())}

    def stance_shares(sids, by_words):
        num, den = defaultdict(int), 0
        for sid, p, _, wc in paragraph_rows(sids):
            w = wc if by_words else 1
            num[validated[(sid, p, "stance")]["final"]] += w
            den += w
        return {"criticism": num["criticism"] / den, "political_agenda": num["political_agenda"] / den}

    def mean(xs):
        xs = [x for x in xs if x is not None]
        if not xs:
            return None
        total = 0.0
        for x in xs:
            total += x
        return total / len(xs)

    def intensity_values(sids, task):
        return [validated[(sid, p, task)]["final"] for sid, p, _, _ in paragraph_rows(sids)]

    def entity_index(sids):
        counts = defaultdict(Counter)
        for sid, p, _, _ in paragraph_rows(sids):
            for e in validated[(sid, p, "ner")]["final"]:
                counts[e["type"]][e["surface"].strip().casefold()] += 1
        return {t: sorted(c.items(), key=lambda kv: (-kv[1], kv[0])) for t, c in sorted(counts.items())}

    def sentiment_by_topic(sids):
        per = defaultdict(list)
        for sid, p, _, _ in paragraph_rows(sids):
            s = validated[(sid, p, "sentiment")]["final"]
            if s is not None:
                per[validated[(sid, p, "topic")]["final"]].append(s)
        out = {}
        for t, xs in sorted(per.items()):
            m = mean(xs)
            out[t] = {"mean": m, "band": sentiment_band(m), "n": len(xs)}
        return out

    def summary(sids):
        m = mean(validated[(sid, p, "sentiment")]["final"] for sid, p, _, _ in paragraph_rows(sids))
        return {
            "mean_sentiment": m,
            "sentiment_band": sentiment_band(m) if m is not None else None,
            "topic_shares": topic_shares(sids, False),
            "topic_shares_agenda": topic_shares(sids, True),
            "stance_shares_words": stance_shares(sids, True),
            "stance_shares_paragraphs": stance_shares(sids, False),
            "mean_polarization": mean(intensity_values(sids, "polarization")),
            "mean_populism": mean(intensity_values(sids, "populism")),
            "will_count": sum(will_count(text) for _, _, text, _ in paragraph_rows(sids)),
            "entity_index": entity_index(sids),
            "sentiment_by_topic": sentiment_by_topic(sids),
        }

    per_speech = {}
    for sid in speeches:
        s = summary([sid])
        s["word_counts"] = word_counts[sid]
        s["intensity_steps"] = {
            t: intensity_values([sid], t) for t in ("polarization", "populism")
        }
        per_speech[sid] = s

    def by_date(sids):
        return sorted(sids, key=lambda s: (speeches[s][0]["date"], s))

    groups = {}
    leaders = sorted({rec["leader_id"] for rec, _ in speeches.values()})
    for leader in leaders:
        for period in ("first", "second"):
            sids = by_date([sid for sid, (rec, _) in speeches.items()
                            if rec["leader_id"] == leader and rec["election_period"] == period])
            if not sids:
                continue
            g = summary(sids)
            g["speech_ids"] = sids
            g["speech_mean_polarization"] = mean([mean(intensity_values([s], "polarization")) for s in sids])
            groups[f"{leader}@{period}"] = g
    for period in ("first", "second"):
        sids = by_date([sid for sid, (rec, _) in speeches.items() if rec["election_period"] == period])
        g = summary(sids)
        g["speech_ids"] = sids
        g["speech_mean_polarization"] = mean([mean(intensity_values([s], "polarization")) for s in sids])
        groups[f"period@{period}"] = g
    all_ids = by_date(list(speeches))
    groups["all"] = summary(all_ids)
    groups["all"]["speech_ids"] = all_ids

    (OUT / "summaries.json").write_text(json.dumps({"speeches": per_speech, "groups": groups}, indent=2) + "\n")
    (OUT / "review_queue.json").write_text(json.dumps(
        {"per_task_entries": dict(queue_count), "total": sum(queue_count.values())}, indent=2) + "\n")

    # segmentation oracle: blank-line runs + 1
    doc = (ROOT / "segment" / "synthetic_171.txt").read_text()
    lines = doc.split("\n")
    if lines and lines[-1] == "":
        lines = lines[:-1]
    runs, in_run = 0, False
    for line in lines:
        blank = line.strip() == ""
        if blank and not in_run:
            runs += 1
        in_run = blank
    (OUT / "segment.json").write_text(json.dumps(
        {"synthetic_171": {"lines": len(lines), "blank_runs": runs, "segments": runs + 1}}, indent=2) + "\n")
    (OUT / "word_counts.json").write_text(json.dumps(word_counts, indent=2) + "\n")


if __name__ == "__main__":
    main()
