#!/usr/bin/env python3
"""Convert CNN/DailyMail .story files into the hred corpus format.

Each story's body lines become `article` sentences (one per non-empty line;
split further upstream if your copy is not sentence-split), and the lines
following `@highlight` markers are joined into `abstract`.

    python3 scripts/stories_to_jsonl.py --stories cnn/stories --urls url_lists/all_train.txt --out train.jsonl
"""

import argparse
import hashlib
import json
import pathlib


def parse_story(text):
    article, highlights, in_highlight = [], [], False
    for line in (l.strip() for l in text.splitlines()):
        if not line:
            continue
        if line == "@highlight":
            in_highlight = True
        elif in_highlight:
            highlights.append(line)
            in_highlight = False
        else:
            article.append(line)
    return {"article": article, "abstract": " . ".join(highlights)}


def story_paths(stories, urls):
    if urls is None:
        return sorted(stories.glob("*.story"))
    out = []
    for url in urls.read_text().split():
        name = hashlib.sha1(url.encode()).hexdigest() + ".story"
        out.append(stories / name)
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--stories", type=pathlib.Path, required=True)
    ap.add_argument("--urls", type=pathlib.Path, help="url list fixing the split and its order")
    ap.add_argument("--out", type=pathlib.Path, required=True)
    args = ap.parse_args()
    written = 0
    with args.out.open("w", encoding="utf-8") as f:
        for path in story_paths(args.stories, args.urls):
            if not path.exists():
                continue
            rec = parse_story(path.read_text(encoding="utf-8"))
            if rec["article"] and rec["abstract"]:
                f.write(json.dumps(rec, ensure_ascii=False) + "\n")
                written += 1
    print(f"{written} records -> {args.out}")


if __name__ == "__main__":
    main()
