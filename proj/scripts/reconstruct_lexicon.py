#!/usr/bin/env python3
"""Rebuild the verb lexicon, the frozen test list and a stand-in nonce file.

The original CELEX-derived lexicon is licensed and not redistributable, so
this script reconstructs a lexicon with the same shape from public sources:

  * verb inventory and orthographic past forms: lemminflect (AGID/SPECIALIST)
  * pronunciations: CMU Pronouncing Dictionary (``cmudict``), mapped to IPA
  * past-form frequencies: ``wordfreq`` English unigram frequencies, scaled so
    that the whole lexicon carries 147,711 tokens (the published token_both
    size; scaling happens before the test verbs are removed)

Type counts are matched to the published inventory (3,857 regular, 150
irregular, 32 with both a regular and an irregular past; regular allomorph
classes 2,045 /d/, 763 /t/, 1,049 /id/). Only the overall token mass is
scaled; per-verb frequencies keep their wordfreq proportions, so token-based
dataset totals and shares differ from a CELEX-derived file.

The nonce file written here is a STAND-IN: the 58-verb layout (16 verbs with a
second irregular form, listed last) matches the wug-test design, but the
human production probabilities and ratings are synthetic draws. It exists to
exercise the correlation pipeline, not to reproduce human data.

Usage:  python3 scripts/reconstruct_lexicon.py [--out data]
Requires: pip install cmudict lemminflect wordfreq
"""

import argparse
import gzip
import os
import random

import cmudict
import lemminflect
from wordfreq import word_frequency

# ARPAbet -> IPA. Stress only matters for AH and ER.
ARPA = {
    "AA": "ɑ", "AE": "æ", "AO": "ɔ", "AW": "aʊ", "AY": "aɪ", "EH": "ɛ",
    "EY": "eɪ", "IH": "ɪ", "IY": "i", "OW": "oʊ", "OY": "ɔɪ", "UH": "ʊ",
    "UW": "u", "B": "b", "CH": "tʃ", "D": "d", "DH": "ð", "F": "f", "G": "g",
    "HH": "h", "JH": "dʒ", "K": "k", "L": "l", "M": "m", "N": "n", "NG": "ŋ",
    "P": "p", "R": "r", "S": "s", "SH": "ʃ", "T": "t", "TH": "θ", "V": "v",
    "W": "w", "Y": "j", "Z": "z", "ZH": "ʒ",
}
VOICELESS = {"p", "t", "k", "f", "θ", "s", "ʃ", "tʃ", "h"}

N_REGULAR = {"d": 2045, "t": 763, "id": 1049}
N_IRREGULAR = 150

# Verbs with both a regular and an irregular past. The appendix lists 33;
# "inset" is dropped to reach the 32 reported in the data section.
AMBIGUOUS = {
    # lemma: (regular orthography, irregular orthography)
    "abide": ("abided", "abode"), "alight": ("alighted", "alit"),
    "awake": ("awaked", "awoke"), "beseech": ("beseeched", "besought"),
    "bet": ("betted", "bet"), "broadcast": ("broadcasted", "broadcast"),
    "cleave": ("cleaved", "clove"), "clothe": ("clothed", "clad"),
    "dive": ("dived", "dove"), "dream": ("dreamed", "dreamt"),
    "floodlight": ("floodlighted", "floodlit"), "gild": ("gilded", "gilt"),
    "gird": ("girded", "girt"), "hang": ("hanged", "hung"),
    "knit": ("knitted", "knit"), "leap": ("leaped", "leapt"),
    "light": ("lighted", "lit"), "outshine": ("outshined", "outshone"),
    "plead": ("pleaded", "pled"), "quit": ("quitted", "quit"),
    "rend": ("rended", "rent"), "shine": ("shined", "shone"),
    "shoe": ("shoed", "shod"), "sneak": ("sneaked", "snuck"),
    "speed": ("speeded", "sped"), "spit": ("spitted", "spat"),
    "stick": ("sticked", "stuck"), "strive": ("strived", "strove"),
    "sweat": ("sweated", "sweat"), "tread": ("treaded", "trod"),
    "wed": ("wedded", "wed"), "wet": ("wetted", "wet"),
}

# Variant-listing verbs whose irregular form is the standard American past.
FORCE_IRREGULAR = {
    "bend", "kneel", "cost", "grind", "fly", "lie", "tear", "wake", "weave",
    "wind", "unbend", "unwind", "rewind", "interweave", "spring", "bid",
    "fit", "rid",
}
EXCLUDE = {
    "be", "beware", "login", "okay", "torpedo", "ski", "fee", "wrought",
    "joyride", "shred", "sled", "lay", "pay", "overpay", "prepay", "repay",
    "underpay", "waylay", "mislay", "outlay", "inlay", "overlay", "relay",
    "inset", "input", "output", "misdo", "lipread", "proofread", "daylight",
    "landslide", "ghostwrite", "babysit", "outbreak", "rebind", "resend",
    "countersink", "bestride", "foreswear", "forego",
}

# Class of the irregular reading, by base verb; prefixed verbs inherit.
BASE_CLASS = {}
for cls, words in {
    "vc": """arise abide bear beget begin bid bind bite bleed blow break breed
        choose cling come dig dive draw drink drive eat fall feed find fling fly
        forbid forget give grind grow hang hide hold know lead lie light meet
        read ride ring rise run see shake shine shit shoot sing sink sit slay
        slide sling slink smite speak speed spin spit spring steal stick sting
        stink stride strike string strive swear swim swing take tear throw
        tread wake wear weave win wind write plead sneak shrink cleave shrive
        forsake""",
    "vc_t": "creep deal dream feel keep kneel leap leave lose mean sleep sweep weep",
    "vc_d": "flee hear say sell tell shoe",
    "ruck": "beseech bring buy catch fight seek teach think",
    "weak": "bend build gild gird lend rend send spend",
    "level": """bet broadcast burst cast cost cut hit hurt knit let put quit rid
        set shed shut slit split spread sweat thrust wed wet beat fit""",
    "other": "do go have make stand clothe",
}.items():
    for w in words.split():
        BASE_CLASS[w] = cls

# Pronunciations missing from (or wrong in) CMUdict.
ARPA_OVERRIDE = {
    "besought": "B IH0 S AO1 T", "alit": "AH0 L IH1 T",
    "floodlit": "F L AH1 D L IH2 T", "outshine": "AW1 T SH AY2 N",
    "outshone": "AW1 T SH OW2 N", "slunk": "S L AH1 NG K",
    "rend": "R EH1 N D", "forwent": "F AO0 R W EH1 N T",
    "shat": "SH AE1 T", "smote": "S M OW1 T", "shrove": "SH R OW1 V",
    "bade": "B AE1 D",
}


def arpa_to_ipa(phones):
    out = []
    for p in phones:
        base = p.rstrip("012")
        stress = p[len(base):]
        if base == "AH":
            out.append("ə" if stress == "0" else "ʌ")
        elif base == "ER":
            out.append("ɚ" if stress == "0" else "ɝ")
        else:
            out.append(ARPA[base])
    return out


CMU = cmudict.dict()


def pron(word):
    if word in ARPA_OVERRIDE:
        return arpa_to_ipa(ARPA_OVERRIDE[word].split())
    entries = CMU.get(word)
    return arpa_to_ipa(entries[0]) if entries else None


def allomorph(stem):
    last = stem[-1]
    if last in ("t", "d"):
        return "id"
    return "t" if last in VOICELESS else "d"


def regular_past(stem):
    a = allomorph(stem)
    return stem + (["ɪ", "d"] if a == "id" else [a])


def base_of(lemma):
    best = None
    for b in BASE_CLASS:
        if lemma.endswith(b) and (best is None or len(b) > len(best)):
            best = b
    return best


def irregular_pron(lemma, past_orth, stem):
    p = pron(past_orth)
    if p is not None:
        return p
    base = base_of(lemma)
    if base and base != lemma:
        bstem, bpast_orth = pron(base), None
        for f in VBD.get(base, []):
            if pron(f) is not None and pron(f) != regular_past(bstem):
                bpast_orth = f
                break
        if bstem and bpast_orth and stem[-len(bstem):] == bstem:
            return stem[: len(stem) - len(bstem)] + pron(bpast_orth)
    return None


def freq(orth):
    return word_frequency(orth, "en")


VBD = {}


def load_verbs():
    path = os.path.join(os.path.dirname(lemminflect.__file__), "resources", "infl_lu.csv.gz")
    with gzip.open(path, "rt") as fh:
        for line in fh:
            parts = line.rstrip("\n").split(",")
            if len(parts) < 3 or parts[1] != "verb":
                continue
            lemma = parts[0]
            if not (lemma.isalpha() and lemma.islower() and len(lemma) > 1):
                continue
            forms = [f for f in parts[2].split("/") if f.isalpha() and f.islower()]
            if forms:
                VBD[lemma] = forms


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="data")
    ap.add_argument("--seed", type=int, default=20221)
    args = ap.parse_args()
    os.makedirs(args.out, exist_ok=True)
    load_verbs()
    rows = []  # (lemma, stem, past, regularity, class, freq)

    # Ambiguous verbs.
    for lemma, (reg_orth, irr_orth) in sorted(AMBIGUOUS.items()):
        stem = pron(lemma)
        irr = pron(irr_orth) or irregular_pron(lemma, irr_orth, stem)
        assert stem and irr, lemma
        cls = "level" if irr == stem else BASE_CLASS[base_of(lemma)]
        rows.append([lemma, stem, regular_past(stem), "reg", allomorph(stem), freq(reg_orth)])
        rows.append([lemma, stem, irr, "irreg", cls, freq(irr_orth)])

    # Pure irregulars: lemmas whose listed past is phonologically irregular.
    irregular, demoted = [], []
    for lemma, forms in VBD.items():
        if lemma in AMBIGUOUS or lemma in EXCLUDE:
            continue
        stem = pron(lemma)
        if stem is None:
            continue
        regs = [f for f in forms if f.endswith("ed") and not (lemma.endswith("d") and f == lemma)]
        irrs = [f for f in forms if f not in regs]
        if not irrs:
            continue
        if regs and lemma not in FORCE_IRREGULAR:
            demoted.append(lemma)
            continue
        base = base_of(lemma)
        if base is None:
            continue
        past = irregular_pron(lemma, irrs[0], stem)
        if past is None or past == regular_past(stem):
            if past == regular_past(stem):
                demoted.append(lemma)
            continue
        cls = "level" if past == stem else BASE_CLASS[base]
        irregular.append((freq(irrs[0]), lemma, stem, past, cls, irrs[0]))
    irregular.sort(key=lambda r: (-r[0], r[1]))
    for f, lemma, stem, past, cls, orth in irregular[:N_IRREGULAR]:
        rows.append([lemma, stem, past, "irreg", cls, f])
    assert len(irregular) >= N_IRREGULAR, len(irregular)

    # Regulars: most frequent past forms per allomorph class.
    taken = {r[0] for r in rows} | {r[1] for r in irregular}
    pools = {"d": [], "t": [], "id": []}
    for lemma, forms in VBD.items():
        if lemma in taken or lemma in EXCLUDE:
            continue
        if len(forms) != 1 or not forms[0].endswith("ed"):
            if lemma not in demoted:
                continue
        orth = next(f for f in forms if f.endswith("ed")) if any(
            f.endswith("ed") for f in forms) else None
        stem = pron(lemma)
        if orth is None or stem is None:
            continue
        f = freq(orth)
        if f <= 0:
            continue
        pools[allomorph(stem)].append((f, lemma, stem))
    for cls, n in N_REGULAR.items():
        pool = sorted(pools[cls], key=lambda r: (-r[0], r[1]))
        assert len(pool) >= n, (cls, len(pool))
        for f, lemma, stem in pool[:n]:
            rows.append([lemma, stem, regular_past(stem), "reg", cls, f])

    scale = 147711.0 / sum(r[5] for r in rows)
    for r in rows:
        r[5] = round(scale * r[5])
    rows.sort(key=lambda r: (r[0], r[3]))
    with open(os.path.join(args.out, "lexicon.tsv"), "w", encoding="utf-8") as fh:
        fh.write("lemma_orth\tstem_ipa\tpast_ipa\tregularity\tverb_class\tcelex_freq\n")
        for lemma, stem, past, reg, cls, f in rows:
            fh.write(f"{lemma}\t{' '.join(stem)}\t{' '.join(past)}\t{reg}\t{cls}\t{f}\n")

    # Frozen test set: 20 regulars per allomorph class; 2 vc_t irregulars and 3
    # from each other irregular class. Draws are repeated until 3-6 of the 20
    # irregulars are ambiguous verbs (the share implied by the type_reg column).
    by_lemma = {}
    for r in rows:
        by_lemma.setdefault(r[0], []).append(r)
    regulars = {c: sorted(l for l, rs in by_lemma.items() if len(rs) == 1
                          and rs[0][3] == "reg" and rs[0][4] == c) for c in N_REGULAR}
    irr_by_class = {}
    for l, rs in by_lemma.items():
        irr_rows = [r for r in rs if r[3] == "irreg"]
        if irr_rows:
            irr_by_class.setdefault(irr_rows[0][4], []).append(l)
    for v in irr_by_class.values():
        v.sort()
    draw_seed = args.seed
    while True:
        rng = random.Random(draw_seed)
        test = []
        for c in ("d", "t", "id"):
            test += rng.sample(regulars[c], 20)
        irr_test = []
        for c in ("vc", "vc_t", "vc_d", "ruck", "weak", "level", "other"):
            irr_test += rng.sample(irr_by_class[c], 2 if c == "vc_t" else 3)
        n_amb = sum(1 for l in irr_test if len(by_lemma[l]) == 2)
        if 3 <= n_amb <= 6:
            break
        draw_seed += 1
    with open(os.path.join(args.out, "test_verbs.txt"), "w", encoding="utf-8") as fh:
        for l in test + irr_test:
            fh.write(l + "\n")

    counts = {}
    for r in rows:
        counts[(r[3], r[4])] = counts.get((r[3], r[4]), 0) + 1
    print("rows", len(rows), "lemmas", len(by_lemma), "draw seed", draw_seed,
          "ambiguous in test", n_amb)
    print(sorted(counts.items()))
    tb = sum(r[5] for r in rows)
    ti = sum(r[5] for r in rows if r[3] == "irreg")
    print("token_both (before test exclusion)", tb, "irregular", ti)

    write_nonce(os.path.join(args.out, "nonce_standin.tsv"), args.seed)


# Stand-in nonce verbs: (stem, regular past, irregular 1, irregular 2).
NONCE = """
baɪz|baɪzd|boʊz|
daɪz|daɪzd|doʊz|
draɪs|draɪst|droʊs|
flɪdʒ|flɪdʒd|flʌdʒ|
froʊ|froʊd|fru|
gɛr|gɛrd|gɔr|
glɪp|glɪpt|glæp|
ræsk|ræskt|rɪsk|
ʃi|ʃid|ʃɛd|
stɪn|stɪnd|stʌn|
tɑrk|tɑrkt|tɔrk|
gɛz|gɛzd|gɔz|
neɪs|neɪst|nɛs|
gleɪs|gleɪst|glɛs|
plɪm|plɪmd|plʌm|
snɛl|snɛld|snoʊld|
skɛl|skɛld|skoʊld|
grim|grimd|grɛmt|
tip|tipt|tɛpt|
flip|flipt|flɛpt|
glid|glidɪd|glɛd|
tʃaɪnd|tʃaɪndɪd|tʃaʊnd|
blɪg|blɪgd|blʌg|
tʃeɪk|tʃeɪkt|tʃʊk|
noʊld|noʊldɪd|nɛld|
drɪt|drɪtɪd|drɪt|
splɪŋ|splɪŋd|splʌŋ|
deɪp|deɪpt|dɛpt|
gud|gudɪd|gɛd|
pʌm|pʌmd|pæm|
ʃɝn|ʃɝnd|ʃɝnt|
skwɪl|skwɪld|skwɪlt|
staɪr|staɪrd|stɔr|
trɪsk|trɪskt|træsk|
tʌŋk|tʌŋkt|tæŋk|
wɪs|wɪst|wæs|
zeɪ|zeɪd|zu|
skɔɪl|skɔɪld|skɔɪlt|
sleɪm|sleɪmd|slʊm|
mɪp|mɪpt|mæp|
kwid|kwidɪd|kwɛd|
dʒɪŋ|dʒɪŋd|dʒæŋ|
prik|prikt|proʊk|prɛk
raɪf|raɪft|roʊf|rɪf
skraɪd|skraɪdɪd|skroʊd|skrɪd
smig|smigd|smoʊg|smɛg
sneɪt|sneɪtɪd|snoʊt|snɪt
stɪp|stɪpt|stæp|stʌp
slʌb|slʌbd|slæb|slʊb
bleɪf|bleɪft|bloʊf|blɛf
kleɪf|kleɪft|kloʊf|klɛf
gloʊk|gloʊkt|glʊk|glɛk
pæŋk|pæŋkt|pʌŋk|pɪŋk
brɛdʒ|brɛdʒd|broʊdʒ|brɔdʒ
grɛl|grɛld|groʊld|grɛlt
plɛr|plɛrd|plɔr|plɝ
grʌk|grʌkt|græk|grɪk
frɪŋk|frɪŋkt|fræŋk|frʌŋk
"""

SEGMENTS = sorted(set(ARPA.values()) | {"ə", "ʌ", "ɚ", "ɝ"}, key=len, reverse=True)


def segment(s):
    out, i = [], 0
    while i < len(s):
        seg = next(g for g in SEGMENTS if s.startswith(g, i))
        out.append(seg)
        i += len(seg)
    return " ".join(out)


def write_nonce(path, seed):
    rng = random.Random(seed)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("verb_ipa\tregular_past_ipa\tirregular_past_ipa_1\tirregular_past_ipa_2\t"
                 "human_ppro_reg\thuman_ppro_irr1\thuman_ppro_irr2\t"
                 "rating_reg\trating_irr1\trating_irr2\n")
        for line in NONCE.split():
            stem, reg, irr1, irr2 = line.split("|")
            p_reg = rng.uniform(0.55, 0.95)
            p_irr1 = rng.uniform(0.0, 1.0 - p_reg) * 0.8
            p_irr2 = rng.uniform(0.0, 1.0 - p_reg - p_irr1) * 0.6 if irr2 else None

            def rating(p):
                return min(7.0, 1.0 + 6.0 * (0.3 + 0.7 * p) * rng.uniform(0.8, 1.0))

            cols = [segment(stem), segment(reg), segment(irr1), segment(irr2) if irr2 else "",
                    f"{p_reg:.2f}", f"{p_irr1:.2f}", f"{p_irr2:.2f}" if irr2 else "",
                    f"{rating(p_reg):.2f}", f"{rating(p_irr1):.2f}",
                    f"{rating(p_irr2):.2f}" if irr2 else ""]
            fh.write("\t".join(cols) + "\n")


if __name__ == "__main__":
    main()
