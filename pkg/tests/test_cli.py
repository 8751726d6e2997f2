import json

import pytest

from stripehouse.cli import main


def test_cli_end_to_end(tmp_path, capsys):
    gen = tmp_path / "gen"
    root = tmp_path / "data" / "stripe"
    assert main(["gen", "--seed", "5", "--patients", "50", "--encounters", "400",
                 "--labs", "2000", "--out", str(gen)]) == 0
    assert main(["ingest", "--table", "lab_procedure", "--format", "stripe",
                 "--partitions", "4", "--csv", str(gen / "lab_procedure.csv"),
                 "--root", str(root), "--stripe-size", "250",
                 "--sort-by", "lab_code"]) == 0
    assert main(["ingest", "--table", "encounter", "--format", "stripe",
                 "--partitions", "4", "--csv", str(gen / "encounter.csv"),
                 "--root", str(root), "--stripe-size", "250"]) == 0
    capsys.readouterr()

    assert main(["query", "-e", "SELECT COUNT(*) FROM lab_procedure",
                 "--root", str(root), "--json"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["rows"] == [[2000]]
    assert out["metrics"]["rows_read"] == 0

    assert main(["query", "-e",
                 "SELECT BUCKET(l.result_value,0,50,100,200) AS cat, "
                 "COUNT(DISTINCT e.patient_id) FROM lab_procedure l "
                 "JOIN encounter e ON l.encounter_id = e.encounter_id "
                 "WHERE l.lab_code = 'LC03' GROUP BY cat",
                 "--root", str(root), "--executors", "2", "--cores", "2"]) == 0
    text = capsys.readouterr().out
    assert "cat" in text and "count(distinct patient_id)" in text

    assert main(["explain", "-e", "SELECT COUNT(*) FROM lab_procedure "
                 "WHERE lab_code = 'LC03'", "--root", str(root)]) == 0
    text = capsys.readouterr().out
    assert "stages (3):" in text
    assert "stripes pruned" in text
    assert " 32 " in text  # cost table sweeps to E=32

    part = root / "tables" / "lab_procedure" / "part-00000.stp"
    assert main(["inspect", str(part)]) == 0
    text = capsys.readouterr().out
    assert "lab_code" in text and "min=" in text


def test_cli_create_custom_table(tmp_path, capsys):
    root = tmp_path / "root"
    assert main(["create", "--table", "vitals",
                 "--columns", "id:int64,name:string:null,bp:float64:null",
                 "--format", "rowtext", "--root", str(root)]) == 0
    csv_file = tmp_path / "v.csv"
    csv_file.write_text("id,name,bp\n1,a,120.5\n2,,\n")
    assert main(["ingest", "--table", "vitals", "--format", "rowtext",
                 "--partitions", "2", "--csv", str(csv_file),
                 "--root", str(root)]) == 0
    capsys.readouterr()
    assert main(["query", "-e", "SELECT COUNT(*), AVG(bp) FROM vitals",
                 "--root", str(root), "--json"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["rows"] == [[2, 120.5]]


def test_cli_error_exit_code(tmp_path, capsys):
    assert main(["query", "-e", "SELECT COUNT(*) FROM missing",
                 "--root", str(tmp_path)]) == 1
    err = capsys.readouterr().err
    assert "UnknownTable" in err


def test_cli_format_selects_subroot(tmp_path, capsys):
    gen = tmp_path / "gen"
    main(["gen", "--seed", "5", "--patients", "10", "--encounters", "50",
          "--labs", "200", "--out", str(gen)])
    for fmt in ("stripe", "rowtext"):
        main(["ingest", "--table", "lab_procedure", "--format", fmt,
              "--partitions", "2", "--csv", str(gen / "lab_procedure.csv"),
              "--root", str(tmp_path / "data" / fmt)])
    capsys.readouterr()
    for fmt in ("stripe", "rowtext"):
        assert main(["query", "-e", "SELECT COUNT(*) FROM lab_procedure",
                     "--root", str(tmp_path / "data"), "--format", fmt,
                     "--json"]) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["rows"] == [[200]]
