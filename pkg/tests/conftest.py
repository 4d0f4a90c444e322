"""Shared fixtures: a tiny hand-written e-commerce database and loaders for it."""

import json
from pathlib import Path

import pytest

from relgraph.store import load_database

DAY = 86400

ECOMMERCE_MANIFEST = {
    "tables": [
        {
            "name": "customers",
            "file": "customers.csv",
            "columns": [
                {"name": "customer_id", "kind": "primary_key"},
                {"name": "name", "kind": "text"},
                {"name": "region", "kind": "categorical"},
            ],
        },
        {
            "name": "products",
            "file": "products.csv",
            "columns": [
                {"name": "product_id", "kind": "primary_key"},
                {"name": "description", "kind": "text"},
                {"name": "price", "kind": "numerical"},
                {"name": "size", "kind": "categorical"},
            ],
        },
        {
            "name": "transactions",
            "file": "transactions.csv",
            "columns": [
                {"name": "transaction_id", "kind": "primary_key"},
                {"name": "customer_id", "kind": "foreign_key", "target": "customers"},
                {"name": "product_id", "kind": "foreign_key", "target": "products"},
                {"name": "price", "kind": "numerical"},
                {"name": "timestamp", "kind": "timestamp"},
            ],
        },
    ]
}

CUSTOMERS = [
    "customer_id,name,region",
    "c1,ada brand,north",
    "c2,bela calle,south",
]
PRODUCTS = [
    "product_id,description,price,size",
    "p1,amber lamp,10.0,small",
    "p2,dusky mug,20.0,large",
]
# Epoch-second timestamps 10/20/30 written as ISO datetimes.
TRANSACTIONS = [
    "transaction_id,customer_id,product_id,price,timestamp",
    "t1,c1,p1,10.0,1970-01-01T00:00:10",
    "t2,c1,p2,20.0,1970-01-01T00:00:20",
    "t3,c2,p1,10.0,1970-01-01T00:00:30",
]


def write_ecommerce(
    directory: Path,
    customers=CUSTOMERS,
    products=PRODUCTS,
    transactions=TRANSACTIONS,
    manifest=ECOMMERCE_MANIFEST,
) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "customers.csv").write_text("\n".join(customers) + "\n", encoding="utf-8")
    (directory / "products.csv").write_text("\n".join(products) + "\n", encoding="utf-8")
    (directory / "transactions.csv").write_text("\n".join(transactions) + "\n", encoding="utf-8")
    manifest_path = directory / "manifest.json"
    manifest_path.write_text(json.dumps(manifest), encoding="utf-8")
    return manifest_path


@pytest.fixture
def ecommerce_dir(tmp_path):
    return write_ecommerce(tmp_path / "shop"), tmp_path / "shop"


@pytest.fixture
def ecommerce_db(ecommerce_dir):
    manifest, directory = ecommerce_dir
    return load_database(manifest, directory)
